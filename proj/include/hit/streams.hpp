#pragma once

#include "hit/attention.hpp"
#include "hit/geometry.hpp"
#include "hit/model_config.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hit {

enum class Branch { kSelf, kObjects, kHands, kMemory };

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::kSelf: return "self";
    case Branch::kObjects: return "objects";
    case Branch::kHands: return "hands";
    case Branch::kMemory: return "memory";
  }
  return "?";
}

/// Enabled aggregation branches in fixed order; theta has one scalar per
/// entry.
inline std::vector<Branch> enabled_branches(const ModelConfig& cfg) {
  std::vector<Branch> out{Branch::kSelf};
  if (cfg.unit_objects) out.push_back(Branch::kObjects);
  if (cfg.unit_hands) out.push_back(Branch::kHands);
  if (cfg.unit_temporal) out.push_back(Branch::kMemory);
  return out;
}

/// Contexts available to a stream at one keyframe. Absent contexts (no
/// detected objects, no cached memory yet) stay disengaged and the
/// aggregator falls back to the current rows so the weighted sum is total.
template <class S>
struct StreamContext {
  std::optional<VarT<S>> objects;  // {M, d} kept object features
  std::optional<VarT<S>> hands;    // {N, d} per-person hand features
  std::optional<VarT<S>> memory;   // {W, d} pooled temporal window
};

template <class S>
struct ImaTrace {
  std::vector<double> weights;
  std::vector<Matrix<S>> branch_outputs;
  Matrix<S> combined;
};

template <class S>
struct StreamTrace {
  AttnTrace<S>* attn = nullptr;
  std::vector<ImaTrace<S>>* ima = nullptr;
};

/// softmax(theta)-weighted convex combination of branch outputs.
template <class S>
VarT<S> ima_combine(VarT<S> theta, const std::vector<VarT<S>>& branch_outputs,
                    ImaTrace<S>* trace = nullptr) {
  if (branch_outputs.empty()) throw std::invalid_argument("ima_combine: no branches");
  if (theta.value().cols() != static_cast<Eigen::Index>(branch_outputs.size()))
    throw std::invalid_argument("ima_combine: theta width " +
                                std::to_string(theta.value().cols()) + " vs " +
                                std::to_string(branch_outputs.size()) + " branches");
  VarT<S> w = softmax(theta, 1);
  VarT<S> z;
  for (size_t i = 0; i < branch_outputs.size(); ++i) {
    VarT<S> term = scale_by(branch_outputs[i], slice_cols(w, static_cast<Eigen::Index>(i), 1));
    z = i == 0 ? term : add(z, term);
  }
  if (trace) {
    for (Eigen::Index i = 0; i < w.value().cols(); ++i)
      trace->weights.push_back(static_cast<double>(w.value().mat()(0, i)));
    for (const auto& b : branch_outputs) trace->branch_outputs.push_back(b.value().mat());
    trace->combined = z.value().mat();
  }
  return z;
}

/// Intra-modality aggregation z: fresh cross-attentions from the current
/// rows to every enabled context, convexly combined under softmax(theta).
/// The self branch passes the current rows through unchanged.
template <class S>
VarT<S> ima_aggregate(BoundParams<S>& bp, const std::string& prefix, VarT<S> current,
                      const StreamContext<S>& ctx, VarT<S> theta,
                      const std::vector<Branch>& branches, int heads,
                      StreamTrace<S> trace = {}) {
  std::vector<VarT<S>> outs;
  for (Branch b : branches) {
    if (b == Branch::kSelf) {
      outs.push_back(current);
      continue;
    }
    std::optional<VarT<S>> c;
    if (b == Branch::kObjects) c = ctx.objects;
    if (b == Branch::kHands) c = ctx.hands;
    if (b == Branch::kMemory) c = ctx.memory;
    VarT<S> context = c.has_value() ? *c : current;  // fallback keeps the sum total
    outs.push_back(cross_attention(bp, prefix + "." + branch_name(b), current, context, heads,
                                   trace.attn));
  }
  ImaTrace<S> local;
  VarT<S> z = ima_combine(theta, outs, trace.ima ? &local : nullptr);
  if (trace.ima) trace.ima->push_back(std::move(local));
  return z;
}

/// Person interaction A(P): the persons attend over themselves.
template <class S>
VarT<S> person_interaction(BoundParams<S>& bp, const std::string& prefix, VarT<S> persons,
                           int heads, AttnTrace<S>* trace = nullptr) {
  return cross_attention(bp, prefix, persons, persons, heads, trace);
}

template <class S>
struct LayerOutputs {
  VarT<S> person_out;                // P'
  std::optional<VarT<S>> object_out; // O' (when the object unit is enabled)
  std::optional<VarT<S>> hand_out;   // H'
};

template <class S>
struct StreamResult {
  VarT<S> features;
  std::vector<LayerOutputs<S>> layers;
};

namespace detail {

/// One z application. "fresh" recomputes branch attentions from the
/// current rows; "cached" reweights the unit outputs computed so far in
/// this layer (memory, which has no standalone unit, is attended fresh);
/// "off" is the no-IMA ablation.
template <class S>
VarT<S> apply_ima(BoundParams<S>& bp, const ModelConfig& cfg, const std::string& layer_prefix,
                  const std::string& theta_name, VarT<S> current, const StreamContext<S>& ctx,
                  const LayerOutputs<S>& cache, const std::vector<Branch>& branches,
                  StreamTrace<S> trace) {
  if (!cfg.ima_enabled()) return current;
  if (!cfg.ima_cached())
    return ima_aggregate(bp, layer_prefix + ".ima", current, ctx, bp(theta_name), branches,
                         cfg.heads, trace);

  std::vector<VarT<S>> outs;
  for (Branch b : branches) {
    switch (b) {
      case Branch::kSelf:
        outs.push_back(current);
        break;
      case Branch::kObjects:
        outs.push_back(cache.object_out.value_or(current));
        break;
      case Branch::kHands:
        outs.push_back(cache.hand_out.value_or(current));
        break;
      case Branch::kMemory:
        outs.push_back(ctx.memory.has_value()
                           ? cross_attention(bp, layer_prefix + ".ima.memory", current,
                                             *ctx.memory, cfg.heads, trace.attn)
                           : current);
        break;
    }
  }
  ImaTrace<S> local;
  VarT<S> z = ima_combine(bp(theta_name), outs, trace.ima ? &local : nullptr);
  if (trace.ima) trace.ima->push_back(std::move(local));
  return z;
}

}  // namespace detail

/// RGB branch: depth layers of A(P) -> z -> A(O) -> z -> A(H) -> z, each
/// unit's output becoming the next unit's query. Unit outputs P', O', H'
/// are retained per layer for the pose branch.
template <class S>
StreamResult<S> rgb_forward(BoundParams<S>& bp, const ModelConfig& cfg, VarT<S> persons,
                            const StreamContext<S>& ctx, StreamTrace<S> trace = {}) {
  if (cfg.depth < 1) throw std::invalid_argument("rgb_forward: depth must be >= 1");
  auto branches = enabled_branches(cfg);
  StreamResult<S> result;
  VarT<S> x = persons;
  for (int l = 0; l < cfg.depth; ++l) {
    std::string lp = "rgb.l" + std::to_string(l);
    LayerOutputs<S> outs{person_interaction(bp, lp + ".unit_person", x, cfg.heads, trace.attn),
                         std::nullopt, std::nullopt};
    x = detail::apply_ima(bp, cfg, lp, "rgb.theta", outs.person_out, ctx, outs, branches, trace);
    if (cfg.unit_objects) {
      outs.object_out = cross_attention(bp, lp + ".unit_object", x,
                                        ctx.objects.value_or(x), cfg.heads, trace.attn);
      x = detail::apply_ima(bp, cfg, lp, "rgb.theta", *outs.object_out, ctx, outs, branches,
                            trace);
    }
    if (cfg.unit_hands) {
      outs.hand_out = cross_attention(bp, lp + ".unit_hand", x, ctx.hands.value_or(x), cfg.heads,
                                      trace.attn);
      x = detail::apply_ima(bp, cfg, lp, "rgb.theta", *outs.hand_out, ctx, outs, branches, trace);
    }
    result.layers.push_back(outs);
  }
  result.features = x;
  return result;
}

/// Pose encoder f: 17 tokens of embedded (x, y, confidence) plus learned
/// joint-index embeddings, pose_blocks self-attention + feed-forward
/// blocks, mean-pooled to one row per person.
template <class S>
VarT<S> pose_encode(BoundParams<S>& bp, GraphT<S>& g, const std::vector<Keypoints>& kps,
                    const ModelConfig& cfg, AttnTrace<S>* trace = nullptr) {
  std::vector<VarT<S>> rows;
  for (const auto& kp : kps) {
    TensorT<S> raw(Shape{Keypoints::kJointCount, 3});
    for (int j = 0; j < Keypoints::kJointCount; ++j) {
      raw.mat()(j, 0) = static_cast<S>(kp.joints[static_cast<size_t>(j)].x);
      raw.mat()(j, 1) = static_cast<S>(kp.joints[static_cast<size_t>(j)].y);
      raw.mat()(j, 2) = static_cast<S>(kp.joints[static_cast<size_t>(j)].conf);
    }
    VarT<S> t = linear(g.leaf(std::move(raw)), bp("pose_enc.embed.w"), bp("pose_enc.embed.b"));
    t = add(t, bp("pose_enc.joint_embed"));
    for (int b = 0; b < cfg.pose_blocks; ++b) {
      std::string p = "pose_enc.blk" + std::to_string(b);
      t = cross_attention(bp, p + ".attn", t, t, cfg.heads, trace);
      VarT<S> ff = linear(relu(linear(t, bp(p + ".ffn1.w"), bp(p + ".ffn1.b"))),
                          bp(p + ".ffn2.w"), bp(p + ".ffn2.b"));
      t = add(t, ff);
    }
    rows.push_back(mean_rows(t));
  }
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

/// Pose branch: mirrors the RGB cascade, reusing that layer's unit
/// outputs as contexts. The first unit queries with K'; later units query
/// with a linear projection of the running z_p.
template <class S>
StreamResult<S> pose_forward(BoundParams<S>& bp, const ModelConfig& cfg, VarT<S> kprime,
                             const StreamResult<S>& rgb, const StreamContext<S>& ctx,
                             StreamTrace<S> trace = {}) {
  if (static_cast<int>(rgb.layers.size()) != cfg.depth)
    throw std::invalid_argument("pose_forward: rgb_forward must run first for every layer");
  auto branches = enabled_branches(cfg);
  StreamResult<S> result;
  VarT<S> x = kprime;
  for (int l = 0; l < cfg.depth; ++l) {
    std::string lp = "pose.l" + std::to_string(l);
    const LayerOutputs<S>& rl = rgb.layers[static_cast<size_t>(l)];
    StreamContext<S> pctx;
    pctx.objects = rl.object_out;
    pctx.hands = rl.hand_out;
    pctx.memory = ctx.memory;

    LayerOutputs<S> outs{cross_attention(bp, lp + ".unit_person", x, rl.person_out, cfg.heads,
                                         trace.attn),
                         std::nullopt, std::nullopt};
    x = detail::apply_ima(bp, cfg, lp, "pose.theta", outs.person_out, pctx, outs, branches,
                          trace);
    if (cfg.unit_objects) {
      VarT<S> q = linear(x, bp(lp + ".qproj_object.w"), bp(lp + ".qproj_object.b"));
      outs.object_out = cross_attention(bp, lp + ".unit_object", q,
                                        rl.object_out.value_or(q), cfg.heads, trace.attn);
      x = detail::apply_ima(bp, cfg, lp, "pose.theta", *outs.object_out, pctx, outs, branches,
                            trace);
    }
    if (cfg.unit_hands) {
      VarT<S> q = linear(x, bp(lp + ".qproj_hand.w"), bp(lp + ".qproj_hand.b"));
      outs.hand_out = cross_attention(bp, lp + ".unit_hand", q, rl.hand_out.value_or(q),
                                      cfg.heads, trace.attn);
      x = detail::apply_ima(bp, cfg, lp, "pose.theta", *outs.hand_out, pctx, outs, branches,
                            trace);
    }
    result.layers.push_back(outs);
  }
  result.features = x;
  return result;
}

/// Registers the parameters of both streams (plus the pose encoder) for
/// the configured units and aggregation mode.
template <class S>
void register_stream_params(ParamSetT<S>& ps, const ModelConfig& cfg) {
  auto branches = enabled_branches(cfg);
  int nb = static_cast<int>(branches.size());
  AttentionDims rgb_dims{cfg.d, cfg.d, cfg.d, cfg.heads};
  AttentionDims pose_unit{cfg.d_p, cfg.d, cfg.d_p, cfg.heads};

  if (cfg.unit_rgb) {
    for (int l = 0; l < cfg.depth; ++l) {
      std::string lp = "rgb.l" + std::to_string(l);
      register_attention(ps, lp + ".unit_person", rgb_dims);
      if (cfg.unit_objects) register_attention(ps, lp + ".unit_object", rgb_dims);
      if (cfg.unit_hands) register_attention(ps, lp + ".unit_hand", rgb_dims);
      if (cfg.ima_enabled()) {
        if (!cfg.ima_cached()) {
          if (cfg.unit_objects) register_attention(ps, lp + ".ima.objects", rgb_dims);
          if (cfg.unit_hands) register_attention(ps, lp + ".ima.hands", rgb_dims);
        }
        if (cfg.unit_temporal) register_attention(ps, lp + ".ima.memory", rgb_dims);
      }
    }
    if (cfg.ima_enabled())
      ps.add_constant("rgb.theta", {1, nb}, static_cast<S>(cfg.theta_init));
  }

  if (cfg.unit_pose) {
    ps.add_linear("pose_enc.embed", 3, cfg.d_p);
    ps.add_uniform("pose_enc.joint_embed", {Keypoints::kJointCount, cfg.d_p},
                   -1.0 / std::sqrt(static_cast<double>(cfg.d_p)),
                   1.0 / std::sqrt(static_cast<double>(cfg.d_p)));
    for (int b = 0; b < cfg.pose_blocks; ++b) {
      std::string p = "pose_enc.blk" + std::to_string(b);
      register_attention(ps, p + ".attn", AttentionDims{cfg.d_p, cfg.d_p, cfg.d_p, cfg.heads});
      ps.add_linear(p + ".ffn1", cfg.d_p, 2 * cfg.d_p);
      ps.add_linear(p + ".ffn2", 2 * cfg.d_p, cfg.d_p);
    }
    // the mirrored cascade; without the RGB stream its contexts are the
    // raw entity rows, so the same shapes apply
    for (int l = 0; l < cfg.depth; ++l) {
      std::string lp = "pose.l" + std::to_string(l);
      register_attention(ps, lp + ".unit_person", pose_unit);
      if (cfg.unit_objects) {
        ps.add_linear(lp + ".qproj_object", cfg.d_p, cfg.d_p);
        register_attention(ps, lp + ".unit_object", pose_unit);
      }
      if (cfg.unit_hands) {
        ps.add_linear(lp + ".qproj_hand", cfg.d_p, cfg.d_p);
        register_attention(ps, lp + ".unit_hand", pose_unit);
      }
      if (cfg.ima_enabled()) {
        if (!cfg.ima_cached()) {
          if (cfg.unit_objects) register_attention(ps, lp + ".ima.objects", pose_unit);
          if (cfg.unit_hands) register_attention(ps, lp + ".ima.hands", pose_unit);
        }
        if (cfg.unit_temporal) register_attention(ps, lp + ".ima.memory", pose_unit);
      }
    }
    if (cfg.ima_enabled())
      ps.add_constant("pose.theta", {1, nb}, static_cast<S>(cfg.theta_init));
  }
}

}  // namespace hit
