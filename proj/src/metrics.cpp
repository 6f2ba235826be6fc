#include "hit/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace hit {

double tube_iou(const Tube& a, const Tube& b) {
  if (a.clip != b.clip) return 0.0;
  std::map<int, const BBox*> bt;
  for (const auto& [t, box] : b.boxes) bt.emplace(t, &box);
  std::set<int> uni;
  for (const auto& [t, box] : a.boxes) uni.insert(t);
  for (const auto& [t, box] : b.boxes) uni.insert(t);
  if (uni.empty()) return 0.0;
  double acc = 0;
  for (const auto& [t, box] : a.boxes) {
    auto it = bt.find(t);
    if (it != bt.end()) acc += iou(box, *it->second);
  }
  return acc / static_cast<double>(uni.size());
}

namespace {

// shared matching + AP core over an abstract overlap measure; items must
// already be restricted to one class
template <class Item, class Gt, class Overlap, class SameGroup>
ClassAP ap_core(std::vector<const Item*> dets, const std::vector<const Gt*>& gts,
                double thresh, Overlap&& overlap, SameGroup&& same_group,
                const std::vector<double>& scores) {
  ClassAP out;
  out.n_gt = static_cast<int>(gts.size());

  // descending score, insertion order on ties
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t i, size_t j) { return scores[i] > scores[j]; });

  std::vector<char> used(gts.size(), 0);
  std::vector<char> is_tp(dets.size(), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const Item* det = dets[order[oi]];
    double best = -1;
    int best_gt = -1;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (used[gi] || !same_group(*det, *gts[gi])) continue;
      double ov = overlap(*det, *gts[gi]);
      if (ov >= thresh && ov > best) {
        best = ov;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0) {
      used[static_cast<size_t>(best_gt)] = 1;
      is_tp[order[oi]] = 1;
    }
  }

  if (out.n_gt == 0) {
    for (char t : is_tp) out.fp += t ? 0 : 1;
    return out;  // AP undefined without ground truth; caller excludes the class
  }

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (size_t oi = 0; oi < order.size(); ++oi) {
    if (is_tp[order[oi]])
      ++tp;
    else
      ++fp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(out.n_gt));
  }
  out.tp = tp;
  out.fp = fp;

  // all-points interpolation: precision monotone non-increasing from the right
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[static_cast<size_t>(i)] =
        std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i) + 1]);
  double ap = 0, prev_r = 0;
  for (size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_r) {
      ap += (recall[i] - prev_r) * precision[i];
      prev_r = recall[i];
    }
  }
  out.ap = ap;
  return out;
}

}  // namespace

ClassAP frame_ap(const std::vector<Detection>& dets, const std::vector<GtBox>& gts, int class_id,
                 double iou_thresh) {
  std::vector<const Detection*> d;
  std::vector<double> scores;
  for (const auto& det : dets)
    if (det.class_id == class_id) {
      d.push_back(&det);
      scores.push_back(det.score);
    }
  std::vector<const GtBox*> g;
  for (const auto& gt : gts)
    if (gt.class_id == class_id) g.push_back(&gt);
  return ap_core(
      d, g, iou_thresh, [](const Detection& a, const GtBox& b) { return iou(a.box, b.box); },
      [](const Detection& a, const GtBox& b) { return a.frame == b.frame; }, scores);
}

EvalReport frame_map(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                     double iou_thresh) {
  EvalReport report;
  report.threshold = iou_thresh;
  std::set<int> classes;
  for (const auto& gt : gts) classes.insert(gt.class_id);
  double acc = 0;
  for (int c : classes) {
    ClassAP ap = frame_ap(dets, gts, c, iou_thresh);
    acc += ap.ap;
    report.per_class.emplace(c, ap);
  }
  report.map = classes.empty() ? 0.0 : acc / static_cast<double>(classes.size());
  return report;
}

EvalReport video_map(const std::vector<Tube>& pred, const std::vector<Tube>& gt,
                     double iou_thresh) {
  EvalReport report;
  report.threshold = iou_thresh;
  std::set<int> classes;
  for (const auto& t : gt) classes.insert(t.class_id);
  double acc = 0;
  for (int c : classes) {
    std::vector<const Tube*> d;
    std::vector<double> scores;
    for (const auto& t : pred)
      if (t.class_id == c) {
        d.push_back(&t);
        scores.push_back(t.score);
      }
    std::vector<const Tube*> g;
    for (const auto& t : gt)
      if (t.class_id == c) g.push_back(&t);
    ClassAP ap = ap_core(
        d, g, iou_thresh, [](const Tube& a, const Tube& b) { return tube_iou(a, b); },
        [](const Tube& a, const Tube& b) { return a.clip == b.clip; }, scores);
    acc += ap.ap;
    report.per_class.emplace(c, ap);
  }
  report.map = classes.empty() ? 0.0 : acc / static_cast<double>(classes.size());
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  for (const auto& [cls, ap] : report.per_class)
    j[std::to_string(cls)] = {
        {"ap", ap.ap}, {"tp", ap.tp}, {"fp", ap.fp}, {"n_gt", ap.n_gt}};
  j["map"] = report.map;
  j["threshold"] = report.threshold;
  return j;
}

}  // namespace hit
