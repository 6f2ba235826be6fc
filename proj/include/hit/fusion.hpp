#pragma once

#include "hit/attention.hpp"
#include "hit/model_config.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hit {

// ---------------------------------------------------------------------------
// label groups and activations
// ---------------------------------------------------------------------------

struct LabelGroup {
  std::string name;
  int size = 0;
  std::string activation;  // "softmax" (mutually exclusive) | "sigmoid" (independent)
  bool is_pose = false;
  int start = 0;  // derived: cumulative over the ordered groups
};

/// Ordered partition of the class ids into activation groups; ranges are
/// disjoint and covering by construction. At most one softmax group may be
/// marked as the pose group.
struct LabelGroups {
  std::vector<LabelGroup> groups;

  static LabelGroups make(std::vector<LabelGroup> gs) {
    LabelGroups lg;
    int start = 0, pose_marks = 0;
    for (auto& g : gs) {
      if (g.size <= 0)
        throw std::invalid_argument("label group '" + g.name + "': size must be positive");
      if (g.activation != "softmax" && g.activation != "sigmoid")
        throw std::invalid_argument("label group '" + g.name + "': unknown activation '" +
                                    g.activation + "'");
      if (g.is_pose) {
        if (g.activation != "softmax")
          throw std::invalid_argument("label group '" + g.name +
                                      "': the pose group must be softmax-exclusive");
        ++pose_marks;
      }
      g.start = start;
      start += g.size;
      lg.groups.push_back(g);
    }
    if (pose_marks > 1)
      throw std::invalid_argument("label groups: more than one group marked as pose");
    return lg;
  }

  int total_classes() const {
    int n = 0;
    for (const auto& g : groups) n += g.size;
    return n;
  }
};

/// Per-person training targets: one class index per softmax group and a
/// binary vector per sigmoid group, both in group order.
struct PersonTargets {
  std::vector<int> softmax_index;
  std::vector<std::vector<float>> sigmoid_bits;
};

/// softmax within each softmax-exclusive group's slice, elementwise
/// sigmoid over sigmoid-independent slices. Value-level (used at
/// inference).
template <class S>
TensorT<S> activate(const TensorT<S>& logits, const LabelGroups& groups) {
  if (logits.cols() != groups.total_classes())
    throw std::invalid_argument("activate: logits width " + std::to_string(logits.cols()) +
                                " vs " + std::to_string(groups.total_classes()) +
                                " grouped classes");
  TensorT<S> out(logits.shape());
  for (const auto& g : groups.groups) {
    auto block = logits.mat().middleCols(g.start, g.size);
    if (g.activation == "softmax") {
      for (Eigen::Index i = 0; i < block.rows(); ++i) {
        S mx = block.row(i).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (block.row(i).array() - mx).exp();
        out.mat().row(i).middleCols(g.start, g.size) = (e / e.sum()).matrix();
      }
    } else {
      out.mat().middleCols(g.start, g.size) =
          (S(1) / (S(1) + (-block.array()).exp())).matrix();
    }
  }
  return out;
}

/// Sum of cross-entropy over softmax groups and stabilised
/// binary-cross-entropy-with-logits over sigmoid groups, averaged over
/// persons.
template <class S>
VarT<S> classification_loss(VarT<S> logits, const std::vector<PersonTargets>& targets,
                            const LabelGroups& groups) {
  Eigen::Index n = logits.value().rows();
  if (static_cast<Eigen::Index>(targets.size()) != n)
    throw std::invalid_argument("loss: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(n) + " persons");
  if (logits.value().cols() != groups.total_classes())
    throw std::invalid_argument("loss: logits width " + std::to_string(logits.value().cols()) +
                                " vs " + std::to_string(groups.total_classes()) + " classes");
  VarT<S> total;
  size_t si = 0, gi = 0;
  for (const auto& g : groups.groups) {
    VarT<S> slice = slice_cols(logits, g.start, g.size);
    VarT<S> term;
    if (g.activation == "softmax") {
      std::vector<int> idx;
      for (const auto& t : targets) {
        if (si >= t.softmax_index.size())
          throw std::invalid_argument("loss: missing softmax target for group '" + g.name + "'");
        idx.push_back(t.softmax_index[si]);
      }
      ++si;
      term = softmax_xent(slice, std::move(idx));
    } else {
      TensorT<S> bits(Shape{n, g.size});
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& t = targets[static_cast<size_t>(i)];
        if (gi >= t.sigmoid_bits.size() ||
            static_cast<int>(t.sigmoid_bits[gi].size()) != g.size)
          throw std::invalid_argument("loss: bad sigmoid target for group '" + g.name + "'");
        for (int j = 0; j < g.size; ++j)
          bits.mat()(i, j) = static_cast<S>(t.sigmoid_bits[gi][static_cast<size_t>(j)]);
      }
      ++gi;
      term = sigmoid_bce(slice, std::move(bits));
    }
    total = total.valid() ? add(total, term) : term;
  }
  return mean_all(total);  // {N,1} -> mean over persons
}

// ---------------------------------------------------------------------------
// memory pool
// ---------------------------------------------------------------------------

/// Cache mapping (clip, frame time) to one pooled person-feature row.
/// Entries written during the current iteration stay attached to their
/// graph (differentiable within the iteration); commit() detaches them so
/// past iterations contribute constants only.
template <class S>
class MemoryPoolT {
 public:
  explicit MemoryPoolT(int span, int capacity_per_clip = 0)
      : span_(span),
        capacity_(capacity_per_clip > 0 ? capacity_per_clip : 2 * (2 * span + 1)) {
    if (span < 0) throw std::invalid_argument("memory pool: span must be >= 0");
  }

  int span() const { return span_; }

  /// Pools person rows by their mean (one row per frame) and overwrites
  /// any stale entry for (clip, t).
  void write(const std::string& clip, int t, VarT<S> person_rows) {
    VarT<S> pooled = mean_rows(person_rows);
    store(clip, t, Entry{pooled.value(), pooled.graph, pooled.node});
  }

  /// Value-only write (memory prefill at evaluation time).
  void write_value(const std::string& clip, int t, const TensorT<S>& person_rows) {
    TensorT<S> pooled = TensorT<S>::from_matrix(person_rows.mat().colwise().mean());
    store(clip, t, Entry{std::move(pooled), nullptr, -1});
  }

  /// Entries with time in [t - s, t + s], time-sorted; at most 2s+1 of
  /// them. Missing frames are simply absent.
  std::vector<std::pair<int, TensorT<S>>> read(const std::string& clip, int t, int s) const {
    std::vector<std::pair<int, TensorT<S>>> out;
    auto it = clips_.find(clip);
    if (it == clips_.end()) return out;
    for (auto e = it->second.lower_bound(t - s); e != it->second.end() && e->first <= t + s; ++e)
      out.emplace_back(e->first, e->second.value);
    return out;
  }

  /// Same window as graph rows {W, d}; entries written on `g` during this
  /// iteration join as live nodes, everything else as constants. Empty
  /// window -> nullopt (callers apply their fallback).
  std::optional<VarT<S>> read_var(GraphT<S>& g, const std::string& clip, int t, int s) const {
    auto it = clips_.find(clip);
    if (it == clips_.end()) return std::nullopt;
    std::vector<VarT<S>> rows;
    for (auto e = it->second.lower_bound(t - s); e != it->second.end() && e->first <= t + s;
         ++e) {
      const Entry& entry = e->second;
      if (entry.graph == &g && entry.node >= 0)
        rows.push_back(VarT<S>{&g, entry.node});
      else
        rows.push_back(g.leaf(entry.value, false, "memory"));
    }
    if (rows.empty()) return std::nullopt;
    return rows.size() == 1 ? rows[0] : concat_rows(rows);
  }

  /// Detach everything from its graph; call at the end of each iteration,
  /// before the iteration's graph is destroyed.
  void commit() {
    for (auto& [clip, entries] : clips_)
      for (auto& [t, e] : entries) {
        e.graph = nullptr;
        e.node = -1;
      }
  }

  void clear() { clips_.clear(); }

  size_t clip_entries(const std::string& clip) const {
    auto it = clips_.find(clip);
    return it == clips_.end() ? 0 : it->second.size();
  }

 private:
  struct Entry {
    TensorT<S> value;  // {1, d}
    GraphT<S>* graph = nullptr;
    int node = -1;
  };

  void store(const std::string& clip, int t, Entry e) {
    auto& entries = clips_[clip];
    entries[t] = std::move(e);
    while (static_cast<int>(entries.size()) > capacity_) {
      // evict the time farthest from the fresh write (earlier on ties)
      auto far = entries.begin();
      int best = -1;
      for (auto it = entries.begin(); it != entries.end(); ++it) {
        int dist = std::abs(it->first - t);
        if (dist > best) {
          best = dist;
          far = it;
        }
      }
      entries.erase(far);
    }
  }

  int span_;
  int capacity_;
  std::map<std::string, std::map<int, Entry>> clips_;
};

// ---------------------------------------------------------------------------
// fusion, temporal interaction, head
// ---------------------------------------------------------------------------

/// Attentive fusion: channel-wise concatenation of the two feature sets,
/// self-attention across the person tokens, then a width-reducing
/// projection back to d.
template <class S>
VarT<S> afm_fuse(BoundParams<S>& bp, VarT<S> f_rgb, VarT<S> f_pose, int heads,
                 AttnTrace<S>* trace = nullptr) {
  if (f_rgb.value().rows() != f_pose.value().rows())
    throw std::invalid_argument("afm_fuse: row counts differ: " +
                                shape_str(f_rgb.value().shape()) + " vs " +
                                shape_str(f_pose.value().shape()));
  VarT<S> cat = concat_channels(f_rgb, f_pose);
  VarT<S> attn = cross_attention(bp, "afm.attn", cat, cat, heads, trace);
  return linear(attn, bp("afm.proj.w"), bp("afm.proj.b"));
}

/// Bi-modal fusion dispatcher covering the selectable alternatives
/// (sum / concat / weighted_sum / average), AFM being the default.
template <class S>
VarT<S> fuse_features(BoundParams<S>& bp, const ModelConfig& cfg, VarT<S> f_rgb, VarT<S> f_pose,
                      AttnTrace<S>* trace = nullptr) {
  if (f_rgb.value().rows() != f_pose.value().rows())
    throw std::invalid_argument("fuse: row counts differ: " + shape_str(f_rgb.value().shape()) +
                                " vs " + shape_str(f_pose.value().shape()));
  const std::string& mode = cfg.fusion_mode;
  if (mode == "afm") return afm_fuse(bp, f_rgb, f_pose, cfg.heads, trace);
  if (mode == "concat")
    return linear(concat_channels(f_rgb, f_pose), bp("fuse.concat.w"), bp("fuse.concat.b"));
  VarT<S> proj = linear(f_pose, bp("fuse.pose_proj.w"), bp("fuse.pose_proj.b"));
  if (mode == "sum") return add(f_rgb, proj);
  if (mode == "average") return scale(add(f_rgb, proj), S(0.5));
  if (mode == "weighted_sum") {
    VarT<S> w = bp("fuse.weighted.theta");
    return add(scale_by(f_rgb, slice_cols(w, 0, 1)), scale_by(proj, slice_cols(w, 1, 1)));
  }
  throw std::invalid_argument("fuse: unknown fusion mode '" + mode + "'");
}

/// Temporal interaction: fused person features query the memory window,
/// whose key and value are two distinct linear projections of the window
/// rows. An empty window is exactly the identity on the input.
template <class S>
VarT<S> temporal_interaction(BoundParams<S>& bp, const std::string& prefix, VarT<S> fused,
                             std::type_identity_t<std::optional<VarT<S>>> window, int heads,
                             AttnTrace<S>* trace = nullptr) {
  if (!window.has_value()) return fused;
  return cross_attention(bp, prefix, fused, *window, heads, trace);
}

/// Classification head g: two feed-forward layers with relu activation,
/// then the output layer.
template <class S>
VarT<S> classify(BoundParams<S>& bp, VarT<S> f_cls) {
  VarT<S> h1 = relu(linear(f_cls, bp("head.fc1.w"), bp("head.fc1.b")));
  VarT<S> h2 = relu(linear(h1, bp("head.fc2.w"), bp("head.fc2.b")));
  return linear(h2, bp("head.out.w"), bp("head.out.b"));
}

template <class S>
void register_fusion_head_params(ParamSetT<S>& ps, const ModelConfig& cfg, int num_classes) {
  bool bimodal = cfg.unit_rgb && cfg.unit_pose;
  if (bimodal) {
    if (cfg.fusion_mode == "afm") {
      Eigen::Index w = cfg.d + cfg.d_p;
      register_attention(ps, "afm.attn", AttentionDims{w, w, w, cfg.heads});
      ps.add_linear("afm.proj", w, cfg.d);
    } else if (cfg.fusion_mode == "concat") {
      ps.add_linear("fuse.concat", cfg.d + cfg.d_p, cfg.d);
    } else if (cfg.fusion_mode == "sum" || cfg.fusion_mode == "average" ||
               cfg.fusion_mode == "weighted_sum") {
      ps.add_linear("fuse.pose_proj", cfg.d_p, cfg.d);
      if (cfg.fusion_mode == "weighted_sum")
        ps.add_constant("fuse.weighted.theta", {1, 2}, S(0.5));
    } else {
      throw std::invalid_argument("fuse: unknown fusion mode '" + cfg.fusion_mode + "'");
    }
  } else if (cfg.unit_pose && !cfg.unit_rgb) {
    ps.add_linear("fuse.pose_proj", cfg.d_p, cfg.d);  // single-stream width adapter
  }

  if (cfg.unit_temporal) {
    if (bimodal && cfg.fusion_placement == "after") {
      register_attention(ps, "ti.rgb", AttentionDims{cfg.d, cfg.d, cfg.d, cfg.heads});
      register_attention(ps, "ti.pose", AttentionDims{cfg.d_p, cfg.d, cfg.d_p, cfg.heads});
    } else {
      register_attention(ps, "ti", AttentionDims{cfg.d, cfg.d, cfg.d, cfg.heads});
    }
  }

  ps.add_linear("head.fc1", cfg.d, cfg.d);
  ps.add_linear("head.fc2", cfg.d, cfg.d);
  ps.add_linear("head.out", cfg.d, num_classes);
}

}  // namespace hit
