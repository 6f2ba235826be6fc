#pragma once

#include "hit/config.hpp"
#include "hit/fusion.hpp"
#include "hit/streams.hpp"
#include "hit/synth.hpp"

#include <optional>

namespace hit {

template <class S>
struct FrameForward {
  VarT<S> logits;       // {N, C}
  VarT<S> person_rows;  // {N, d} input-projected person features (memory source)
  SelectedEntities sel;
};

/// The full network for one keyframe: entity selection and ROI cropping,
/// both interaction streams, fusion, temporal interaction and the
/// classification head, wired per the run configuration.
template <class S>
class HitModel {
 public:
  explicit HitModel(const RunConfig& cfg) : cfg_(cfg), params_(cfg.data.seed) {
    raw_dim_ = static_cast<Eigen::Index>(cfg.data.geometry.channels) * cfg.model.roi_size *
               cfg.model.roi_size;
    params_.add_linear("in_proj.person", raw_dim_, cfg.model.d);
    if (cfg.model.unit_objects) params_.add_linear("in_proj.object", raw_dim_, cfg.model.d);
    if (cfg.model.unit_hands) params_.add_linear("in_proj.hand", raw_dim_, cfg.model.d);
    register_stream_params(params_, cfg.model);
    register_fusion_head_params(params_, cfg.model, cfg.label_groups.total_classes());
  }

  const RunConfig& config() const { return cfg_; }
  ParamSetT<S>& params() { return params_; }
  const ParamSetT<S>& params() const { return params_; }
  Eigen::Index raw_dim() const { return raw_dim_; }
  int num_classes() const { return cfg_.label_groups.total_classes(); }

  SelectConfig select_config() const {
    return SelectConfig{cfg_.data.object_score_thresh, cfg_.data.jitter, cfg_.model.hand_margin,
                        cfg_.model.wrist_conf_floor};
  }

  FrameForward<S> forward_frame(GraphT<S>& g, BoundParams<S>& bp, const FrameTruth& frame,
                                std::type_identity_t<std::optional<VarT<S>>> memory_window,
                                Mode mode, Rng* jitter_rng,
                                StreamTrace<S> trace = {}) const {
    if (frame.persons.empty())
      throw std::invalid_argument("forward_frame: frames with no person are skipped upstream");
    const ModelConfig& mc = cfg_.model;
    FrameForward<S> out;
    out.sel = select_entities(frame, mode, select_config(), jitter_rng);

    VarT<S> grid = g.leaf(frame.grid.template cast<S>(), false, "grid");
    out.person_rows = crop_rows(g, bp, grid, out.sel.person_boxes, "in_proj.person");

    StreamContext<S> ctx;
    if (mc.unit_hands) ctx.hands = crop_rows(g, bp, grid, out.sel.hand_boxes, "in_proj.hand");
    if (mc.unit_objects && !out.sel.objects.empty()) {
      std::vector<BBox> oboxes;
      for (const auto& o : out.sel.objects) oboxes.push_back(o.box);
      ctx.objects = crop_rows(g, bp, grid, oboxes, "in_proj.object");
    }
    if (mc.unit_temporal) ctx.memory = memory_window;

    StreamResult<S> rgb;
    if (mc.unit_rgb) {
      rgb = rgb_forward(bp, mc, out.person_rows, ctx, trace);
    } else {
      // stand-in contexts for a pose-only model: the raw entity rows
      rgb.features = out.person_rows;
      for (int l = 0; l < mc.depth; ++l)
        rgb.layers.push_back(LayerOutputs<S>{out.person_rows, ctx.objects, ctx.hands});
    }

    std::optional<VarT<S>> pose;
    if (mc.unit_pose) {
      VarT<S> kprime = pose_encode(bp, g, out.sel.keypoints, mc, trace.attn);
      pose = pose_forward(bp, mc, kprime, rgb, ctx, trace).features;
    }

    VarT<S> f_cls;
    bool bimodal = mc.unit_rgb && mc.unit_pose;
    if (bimodal && mc.fusion_placement == "after" && mc.unit_temporal) {
      VarT<S> gr = temporal_interaction(bp, "ti.rgb", rgb.features, memory_window, mc.heads,
                                        trace.attn);
      VarT<S> gp = temporal_interaction(bp, "ti.pose", *pose, memory_window, mc.heads,
                                        trace.attn);
      f_cls = fuse_features(bp, mc, gr, gp, trace.attn);
    } else {
      VarT<S> fused;
      if (bimodal) {
        fused = fuse_features(bp, mc, rgb.features, *pose, trace.attn);
      } else if (mc.unit_pose && !mc.unit_rgb) {
        fused = linear(*pose, bp("fuse.pose_proj.w"), bp("fuse.pose_proj.b"));
      } else {
        fused = rgb.features;  // rgb-only, or bare entity rows
      }
      f_cls = mc.unit_temporal
                  ? temporal_interaction(bp, "ti", fused, memory_window, mc.heads, trace.attn)
                  : fused;
    }
    out.logits = classify(bp, f_cls);
    return out;
  }

  /// Input-projected person rows only, for the evaluation-time memory
  /// prefill pass.
  TensorT<S> person_input_rows(const FrameTruth& frame) const {
    GraphT<S> g;
    ParamSetT<S>& ps = const_cast<ParamSetT<S>&>(params_);
    BoundParams<S> bp(g, ps);
    auto sel = select_entities(frame, Mode::kEval, select_config(), nullptr);
    VarT<S> grid = g.leaf(frame.grid.template cast<S>(), false, "grid");
    return crop_rows(g, bp, grid, sel.person_boxes, "in_proj.person").value();
  }

 private:
  VarT<S> crop_rows(GraphT<S>&, BoundParams<S>& bp, VarT<S> grid,
                    const std::vector<BBox>& boxes, const std::string& proj) const {
    std::vector<VarT<S>> rows;
    for (const BBox& box : boxes) {
      VarT<S> roi = roi_align(grid, box, cfg_.model.roi_size);
      rows.push_back(reshape(roi, Shape{1, raw_dim_}));
    }
    VarT<S> stacked = rows.size() == 1 ? rows[0] : concat_rows(rows);
    return linear(stacked, bp(proj + ".w"), bp(proj + ".b"));
  }

  RunConfig cfg_;
  ParamSetT<S> params_;
  Eigen::Index raw_dim_ = 0;
};

/// Full-clip loss: frames in order, each frame's pooled person rows
/// written to the pool before the next frame reads its window. Pure in
/// (params, clip), which makes it the gradient-check target.
template <class S>
VarT<S> clip_loss(const HitModel<S>& model, GraphT<S>& g, BoundParams<S>& bp,
                  const SyntheticClip& clip, MemoryPoolT<S>& pool, Mode mode, Rng* jitter_rng) {
  const RunConfig& cfg = model.config();
  VarT<S> total;
  int frames = 0;
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    const FrameTruth& frame = clip.frames[t];
    if (frame.persons.empty()) continue;
    auto window = cfg.model.unit_temporal
                      ? pool.read_var(g, clip.clip_id, static_cast<int>(t),
                                      cfg.model.memory_span)
                      : std::nullopt;
    auto fwd = model.forward_frame(g, bp, frame, window, mode, jitter_rng);
    pool.write(clip.clip_id, static_cast<int>(t), fwd.person_rows);
    std::vector<PersonTargets> targets;
    for (const auto& person : frame.persons)
      targets.push_back(person_targets(person, cfg.data.task));
    VarT<S> loss = classification_loss(fwd.logits, targets, cfg.label_groups);
    total = total.valid() ? add(total, loss) : loss;
    ++frames;
  }
  if (!total.valid()) throw std::invalid_argument("clip_loss: clip has no labelled frames");
  return scale(total, S(1) / static_cast<S>(frames));
}

}  // namespace hit
