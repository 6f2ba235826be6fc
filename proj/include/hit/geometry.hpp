#pragma once

#include "hit/graph.hpp"
#include "hit/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace hit {

/// Axis-aligned box in normalized image coordinates, x1 <= x2, y1 <= y2,
/// everything clamped to [0,1].
struct BBox {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  static BBox make(float x1, float y1, float x2, float y2) {
    auto clamp01 = [](float v) { return std::min(1.0f, std::max(0.0f, v)); };
    BBox b;
    b.x1 = clamp01(std::min(x1, x2));
    b.x2 = clamp01(std::max(x1, x2));
    b.y1 = clamp01(std::min(y1, y2));
    b.y2 = clamp01(std::max(y1, y2));
    return b;
  }

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float area() const { return width() * height(); }
  float cx() const { return 0.5f * (x1 + x2); }
  float cy() const { return 0.5f * (y1 + y2); }
  bool degenerate() const { return width() <= 0 || height() <= 0; }
};

struct Joint {
  float x = 0, y = 0, conf = 0;
};

/// COCO-ordered 17-joint pose; wrists are joints 9 (left) and 10 (right).
struct Keypoints {
  static constexpr int kJointCount = 17;
  static constexpr int kLeftWrist = 9;
  static constexpr int kRightWrist = 10;
  std::array<Joint, kJointCount> joints{};
};

struct ScoredBox {
  BBox box;
  float score = 0;
  int category = 0;
};

inline double iou(const BBox& a, const BBox& b) {
  double ix = std::max(0.0f, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double iy = std::max(0.0f, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = ix * iy;
  double uni = static_cast<double>(a.area()) + b.area() - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

/// Hull of the two wrist joints, padded by margin * max(hull_w, hull_h)
/// per side. Coincident wrists get a minimum square of side 2*margin
/// (0.02 when margin is 0), and a degenerate hull dimension gets the same
/// floor so the ROI never collapses. Returns nullopt when either wrist
/// confidence is below conf_floor; callers substitute the person box.
inline std::optional<BBox> hand_box(const Keypoints& kp, float margin, float conf_floor = 0.0f) {
  const Joint& l = kp.joints[Keypoints::kLeftWrist];
  const Joint& r = kp.joints[Keypoints::kRightWrist];
  if (l.conf < conf_floor || r.conf < conf_floor) return std::nullopt;
  float x1 = std::min(l.x, r.x), x2 = std::max(l.x, r.x);
  float y1 = std::min(l.y, r.y), y2 = std::max(l.y, r.y);
  float extent = std::max(x2 - x1, y2 - y1);
  float pad = margin * extent;
  x1 -= pad;
  x2 += pad;
  y1 -= pad;
  y2 += pad;
  float floor_side = margin > 0 ? 2.0f * margin : 0.02f;
  if (x2 - x1 <= 0) {
    float c = 0.5f * (x1 + x2);
    x1 = c - 0.5f * floor_side;
    x2 = c + 0.5f * floor_side;
  }
  if (y2 - y1 <= 0) {
    float c = 0.5f * (y1 + y2);
    y1 = c - 0.5f * floor_side;
    y2 = c + 0.5f * floor_side;
  }
  return BBox::make(x1, y1, x2, y2);
}

/// Keeps objects with score >= score_thresh whose IoU with some person is
/// strictly positive. Stable order.
inline std::vector<ScoredBox> filter_objects(const std::vector<ScoredBox>& objects,
                                             const std::vector<BBox>& persons,
                                             float score_thresh) {
  std::vector<ScoredBox> out;
  for (const auto& o : objects) {
    if (o.score < score_thresh) continue;
    bool overlaps = false;
    for (const auto& p : persons)
      if (iou(o.box, p) > 0) {
        overlaps = true;
        break;
      }
    if (overlaps) out.push_back(o);
  }
  return out;
}

/// Each coordinate is offset by uniform(-amount, +amount) times the box
/// extent on its axis, then the box is re-validated and clamped.
inline BBox jitter_box(const BBox& box, Rng& rng, float amount) {
  if (amount < 0) throw std::invalid_argument("jitter_box: amount must be >= 0");
  float w = box.width(), h = box.height();
  float x1 = box.x1 + static_cast<float>(rng.uniform(-amount, amount)) * w;
  float y1 = box.y1 + static_cast<float>(rng.uniform(-amount, amount)) * h;
  float x2 = box.x2 + static_cast<float>(rng.uniform(-amount, amount)) * w;
  float y2 = box.y2 + static_cast<float>(rng.uniform(-amount, amount)) * h;
  return BBox::make(x1, y1, x2, y2);
}

namespace detail {

struct RoiSample {
  Eigen::Index cell;  // p * P + q
  Eigen::Index y, x;  // grid cell
  double weight;
};

/// Sample plan for one box: for every output cell, 2x2 regularly spaced
/// points, each bilinearly interpolated from 4 neighbours and averaged.
/// The grid's spatial extent maps linearly onto the unit square, pixel
/// centers at ((j+0.5)/W, (i+0.5)/H).
inline std::vector<RoiSample> roi_sample_plan(const BBox& box, Eigen::Index h, Eigen::Index w,
                                              Eigen::Index p) {
  std::vector<RoiSample> plan;
  plan.reserve(static_cast<size_t>(p * p * 16));
  double bw = box.width(), bh = box.height();
  for (Eigen::Index py = 0; py < p; ++py) {
    for (Eigen::Index px = 0; px < p; ++px) {
      for (double fy : {0.25, 0.75}) {
        for (double fx : {0.25, 0.75}) {
          double u = box.x1 + bw * (static_cast<double>(px) + fx) / static_cast<double>(p);
          double v = box.y1 + bh * (static_cast<double>(py) + fy) / static_cast<double>(p);
          double gx = std::clamp(u * static_cast<double>(w) - 0.5, 0.0,
                                 static_cast<double>(w - 1));
          double gy = std::clamp(v * static_cast<double>(h) - 0.5, 0.0,
                                 static_cast<double>(h - 1));
          Eigen::Index x0 = static_cast<Eigen::Index>(std::floor(gx));
          Eigen::Index y0 = static_cast<Eigen::Index>(std::floor(gy));
          Eigen::Index x1 = std::min(x0 + 1, w - 1);
          Eigen::Index y1 = std::min(y0 + 1, h - 1);
          double ax = gx - static_cast<double>(x0), ay = gy - static_cast<double>(y0);
          Eigen::Index cell = py * p + px;
          const double quarter = 0.25;  // average of the 4 sample points
          plan.push_back({cell, y0, x0, quarter * (1 - ax) * (1 - ay)});
          plan.push_back({cell, y0, x1, quarter * ax * (1 - ay)});
          plan.push_back({cell, y1, x0, quarter * (1 - ax) * ay});
          plan.push_back({cell, y1, x1, quarter * ax * ay});
        }
      }
    }
  }
  return plan;
}

}  // namespace detail

/// ROIAlign over a {C,H,W} feature grid: {C,P,P} output, differentiable
/// with respect to the grid.
template <class S>
VarT<S> roi_align(VarT<S> grid, const BBox& box, Eigen::Index p) {
  auto& g = *grid.graph;
  const TensorT<S>& gv = grid.value();
  if (gv.rank() != 3)
    throw std::invalid_argument("roi_align: feature grid must be {C,H,W}, got " +
                                shape_str(gv.shape()));
  if (box.degenerate())
    throw std::invalid_argument("roi_align: degenerate box [" + std::to_string(box.x1) + ", " +
                                std::to_string(box.y1) + ", " + std::to_string(box.x2) + ", " +
                                std::to_string(box.y2) + "]");
  if (p <= 0) throw std::invalid_argument("roi_align: out size must be positive");
  Eigen::Index c = gv.shape()[0], h = gv.shape()[1], w = gv.shape()[2];
  auto plan = detail::roi_sample_plan(box, h, w, p);

  TensorT<S> out(Shape{c, p, p});
  // grid storage: row c*H + y, col x; output storage: row c*P + py, col px
  const auto& gm = gv.mat();
  auto& om = out.mat();
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (const auto& s : plan) {
      om(ch * p + s.cell / p, s.cell % p) +=
          static_cast<S>(s.weight) * gm(ch * h + s.y, s.x);
    }
  }
  int pg = grid.node;
  return g.make(std::move(out), {pg}, "roi_align",
                [pg, plan = std::move(plan), c, h, p](GraphT<S>& gr, int self) {
                  if (!gr.wants_grad(pg)) return;
                  const auto& go = gr.node(self).grad.mat();
                  auto& gx = gr.grad_buffer(pg);
                  for (Eigen::Index ch = 0; ch < c; ++ch) {
                    for (const auto& s : plan) {
                      gx(ch * h + s.y, s.x) +=
                          static_cast<S>(s.weight) * go(ch * p + s.cell / p, s.cell % p);
                    }
                  }
                });
}

/// Value-only ROIAlign for code that is not differentiating (generator
/// oracles, diagnostics).
template <class S>
TensorT<S> roi_align_value(const TensorT<S>& grid, const BBox& box, Eigen::Index p) {
  GraphT<S> g;
  return roi_align(g.leaf(grid), box, p).value();
}

}  // namespace hit
