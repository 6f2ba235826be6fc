#pragma once

#include "hit/geometry.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace hit {

struct FrameKey {
  std::string clip;
  int t = 0;
  auto operator<=>(const FrameKey&) const = default;
};

struct Detection {
  FrameKey frame;
  BBox box;
  int class_id = 0;
  double score = 0;
};

struct GtBox {
  FrameKey frame;
  BBox box;
  int class_id = 0;
};

/// Temporally consecutive per-frame boxes with one class and score.
struct Tube {
  std::string clip;
  int class_id = 0;
  double score = 0;
  std::vector<std::pair<int, BBox>> boxes;  // times strictly increasing, consecutive
};

struct ClassAP {
  double ap = 0;
  int tp = 0;
  int fp = 0;
  int n_gt = 0;
  int missed() const { return n_gt - tp; }
};

/// Per-class APs plus their mean over classes with at least one ground
/// truth.
struct EvalReport {
  std::map<int, ClassAP> per_class;
  double map = 0;
  double threshold = 0;
};

/// Spatio-temporal overlap: sum of per-frame IoU over the temporal
/// intersection, divided by the size of the temporal union of the frame
/// sets. Different clips give 0 by definition.
double tube_iou(const Tube& a, const Tube& b);

/// Average precision for one class: detections in descending-score order
/// (ties by insertion order), each matched to the unmatched same-frame
/// ground truth of maximal IoU >= iou_thresh; duplicates are false
/// positives. AP is the area under the precision-recall curve with
/// precision made monotonically non-increasing from the right.
ClassAP frame_ap(const std::vector<Detection>& dets, const std::vector<GtBox>& gts, int class_id,
                 double iou_thresh);

/// Mean of frame_ap over every class with ground truth.
EvalReport frame_map(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                     double iou_thresh);

/// Same matching and AP machinery with tube_iou as the overlap measure.
EvalReport video_map(const std::vector<Tube>& pred, const std::vector<Tube>& gt,
                     double iou_thresh);

nlohmann::json report_to_json(const EvalReport& report);

}  // namespace hit
