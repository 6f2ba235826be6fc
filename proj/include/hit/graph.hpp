#pragma once

#include "hit/tensor.hpp"

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hit {

template <class Scalar>
class GraphT;

/// Handle to a node on a differentiation tape. Cheap to copy; the graph
/// owns the values.
template <class Scalar>
struct VarT {
  GraphT<Scalar>* graph = nullptr;
  int node = -1;

  bool valid() const { return graph != nullptr && node >= 0; }
  const TensorT<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape over a closed op set. Nodes are appended in forward
/// order, so the tape order is already topological; backward() walks it in
/// reverse and accumulates parent gradients exactly once per use site.
/// Every op validates finiteness of its result and fails fast naming the
/// op (or parameter path, for leaves).
template <class Scalar>
class GraphT {
 public:
  using Tensor = TensorT<Scalar>;
  using Var = VarT<Scalar>;
  using BackwardFn = std::function<void(GraphT&, int)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::string label;
    std::vector<int> parents;
    BackwardFn backward;
  };

  GraphT() { nodes_.reserve(1024); }
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  Var leaf(Tensor value, bool requires_grad = false, std::string label = "leaf") {
    ensure_finite(value, label);
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.label = std::move(label);
    nodes_.push_back(std::move(n));
    return Var{this, size() - 1};
  }

  /// Appends a non-leaf node. `backward` reads this node's gradient and
  /// scatters into the parents via grad_buffer(); geometry ops (ROIAlign)
  /// extend the op set through this same entry point.
  Var make(Tensor value, std::vector<int> parents, std::string label, BackwardFn backward) {
    ensure_finite(value, label);
    Node n;
    n.value = std::move(value);
    n.label = std::move(label);
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    for (int p : n.parents)
      if (nodes_[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{this, size() - 1};
  }

  bool wants_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  /// Zero-initialised gradient accumulator for a node.
  Matrix<Scalar>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
    return n.grad.mat();
  }

  const Tensor& grad(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) throw std::runtime_error("graph: no gradient recorded for '" + n.label + "'");
    return n.grad;
  }

  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].has_grad; }

  void backward(Var loss) {
    if (loss.graph != this) throw std::invalid_argument("backward: loss from another graph");
    if (backward_done_)
      throw std::runtime_error("backward: already run on this graph; build a fresh graph to reset");
    const Node& ln = node(loss.node);
    if (ln.value.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(ln.value.shape()));
    backward_done_ = true;

    std::vector<char> needed(nodes_.size(), 0);
    needed[static_cast<size_t>(loss.node)] = 1;
    for (int i = loss.node; i >= 0; --i) {
      if (!needed[static_cast<size_t>(i)]) continue;
      for (int p : nodes_[static_cast<size_t>(i)].parents) needed[static_cast<size_t>(p)] = 1;
    }

    grad_buffer(loss.node).setOnes();
    for (int i = loss.node; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!needed[static_cast<size_t>(i)] || !n.requires_grad || !n.has_grad) continue;
      if (!n.grad.all_finite())
        throw std::runtime_error("backward: non-finite gradient at op '" + n.label + "'");
      if (n.backward) n.backward(*this, i);
    }
  }

  bool backward_done() const { return backward_done_; }

  static void ensure_finite(const Tensor& t, const std::string& label) {
    if (!t.all_finite())
      throw std::runtime_error("non-finite value produced by op '" + label + "'");
  }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

template <class Scalar>
inline const TensorT<Scalar>& VarT<Scalar>::value() const {
  return graph->node(node).value;
}

namespace detail {

template <class Scalar>
inline GraphT<Scalar>& same_graph(const VarT<Scalar>& a, const VarT<Scalar>& b,
                                  const char* op) {
  if (!a.valid() || !b.valid() || a.graph != b.graph)
    throw std::invalid_argument(std::string(op) + ": operands must live on the same graph");
  return *a.graph;
}

template <class Scalar>
inline void require_rank2(const VarT<Scalar>& v, const char* op) {
  if (v.value().rank() > 2)
    throw std::invalid_argument(std::string(op) + ": expected rank <= 2, got shape " +
                                shape_str(v.value().shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// op set
// ---------------------------------------------------------------------------

template <class S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
  auto& g = detail::same_graph(a, b, "matmul");
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const auto& A = a.value().mat();
  const auto& B = b.value().mat();
  if (A.cols() != B.rows())
    throw std::invalid_argument("matmul: inner extents do not match: " +
                                shape_str(a.value().shape()) + " x " +
                                shape_str(b.value().shape()));
  Matrix<S> out = A * B;
  int pa = a.node, pb = b.node;
  return g.make(TensorT<S>::from_matrix(std::move(out)), {pa, pb}, "matmul",
                [pa, pb](GraphT<S>& gr, int self) {
                  const auto& go = gr.node(self).grad.mat();
                  if (gr.wants_grad(pa))
                    gr.grad_buffer(pa).noalias() += go * gr.node(pb).value.mat().transpose();
                  if (gr.wants_grad(pb))
                    gr.grad_buffer(pb).noalias() += gr.node(pa).value.mat().transpose() * go;
                });
}

template <class S>
VarT<S> transpose(VarT<S> a) {
  auto& g = *a.graph;
  detail::require_rank2(a, "transpose");
  Matrix<S> out = a.value().mat().transpose();
  int pa = a.node;
  return g.make(TensorT<S>::from_matrix(std::move(out)), {pa}, "transpose",
                [pa](GraphT<S>& gr, int self) {
                  if (gr.wants_grad(pa))
                    gr.grad_buffer(pa) += gr.node(self).grad.mat().transpose();
                });
}

template <class S>
VarT<S> add(VarT<S> a, VarT<S> b) {
  auto& g = detail::same_graph(a, b, "add");
  if (a.value().shape() != b.value().shape())
    throw std::invalid_argument("add: shapes differ: " + shape_str(a.value().shape()) + " vs " +
                                shape_str(b.value().shape()));
  TensorT<S> out(a.value().shape(), a.value().mat() + b.value().mat());
  int pa = a.node, pb = b.node;
  return g.make(std::move(out), {pa, pb}, "add", [pa, pb](GraphT<S>& gr, int self) {
    const auto& go = gr.node(self).grad.mat();
    if (gr.wants_grad(pa)) gr.grad_buffer(pa) += go;
    if (gr.wants_grad(pb)) gr.grad_buffer(pb) += go;
  });
}

template <class S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
  auto& g = detail::same_graph(a, b, "sub");
  if (a.value().shape() != b.value().shape())
    throw std::invalid_argument("sub: shapes differ: " + shape_str(a.value().shape()) + " vs " +
                                shape_str(b.value().shape()));
  TensorT<S> out(a.value().shape(), a.value().mat() - b.value().mat());
  int pa = a.node, pb = b.node;
  return g.make(std::move(out), {pa, pb}, "sub", [pa, pb](GraphT<S>& gr, int self) {
    const auto& go = gr.node(self).grad.mat();
    if (gr.wants_grad(pa)) gr.grad_buffer(pa) += go;
    if (gr.wants_grad(pb)) gr.grad_buffer(pb) -= go;
  });
}

template <class S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
  auto& g = detail::same_graph(a, b, "mul");
  if (a.value().shape() != b.value().shape())
    throw std::invalid_argument("mul: shapes differ: " + shape_str(a.value().shape()) + " vs " +
                                shape_str(b.value().shape()));
  TensorT<S> out(a.value().shape(), a.value().mat().cwiseProduct(b.value().mat()));
  int pa = a.node, pb = b.node;
  return g.make(std::move(out), {pa, pb}, "mul", [pa, pb](GraphT<S>& gr, int self) {
    const auto& go = gr.node(self).grad.mat();
    if (gr.wants_grad(pa)) gr.grad_buffer(pa) += go.cwiseProduct(gr.node(pb).value.mat());
    if (gr.wants_grad(pb)) gr.grad_buffer(pb) += go.cwiseProduct(gr.node(pa).value.mat());
  });
}

template <class S>
VarT<S> scale(VarT<S> a, S c) {
  auto& g = *a.graph;
  TensorT<S> out(a.value().shape(), a.value().mat() * c);
  int pa = a.node;
  return g.make(std::move(out), {pa}, "scale", [pa, c](GraphT<S>& gr, int self) {
    if (gr.wants_grad(pa)) gr.grad_buffer(pa) += gr.node(self).grad.mat() * c;
  });
}

/// Multiply every element of `a` by a 1x1 graph scalar (used for the
/// learnable softmax(theta) branch weights).
template <class S>
VarT<S> scale_by(VarT<S> a, VarT<S> s) {
  auto& g = detail::same_graph(a, s, "scale_by");
  if (s.value().size() != 1)
    throw std::invalid_argument("scale_by: weight must be 1x1, got " +
                                shape_str(s.value().shape()));
  S w = s.value().item();
  TensorT<S> out(a.value().shape(), a.value().mat() * w);
  int pa = a.node, ps = s.node;
  return g.make(std::move(out), {pa, ps}, "scale_by", [pa, ps, w](GraphT<S>& gr, int self) {
    const auto& go = gr.node(self).grad.mat();
    if (gr.wants_grad(pa)) gr.grad_buffer(pa) += go * w;
    if (gr.wants_grad(ps))
      gr.grad_buffer(ps)(0, 0) += go.cwiseProduct(gr.node(pa).value.mat()).sum();
  });
}

/// Bias-add: broadcast a {1,d} row over the rows of x. The only
/// broadcasting in the op set.
template <class S>
VarT<S> add_rowvec(VarT<S> x, VarT<S> b) {
  auto& g = detail::same_graph(x, b, "add_rowvec");
  detail::require_rank2(x, "add_rowvec");
  if (b.value().rows() != 1 || b.value().cols() != x.value().cols())
    throw std::invalid_argument("add_rowvec: bias " + shape_str(b.value().shape()) +
                                " does not broadcast over " + shape_str(x.value().shape()));
  Matrix<S> out = x.value().mat().rowwise() + b.value().mat().row(0);
  int px = x.node, pb = b.node;
  return g.make(TensorT<S>(x.value().shape(), std::move(out)), {px, pb}, "add_rowvec",
                [px, pb](GraphT<S>& gr, int self) {
                  const auto& go = gr.node(self).grad.mat();
                  if (gr.wants_grad(px)) gr.grad_buffer(px) += go;
                  if (gr.wants_grad(pb)) gr.grad_buffer(pb) += go.colwise().sum();
                });
}

template <class S>
VarT<S> relu(VarT<S> x) {
  auto& g = *x.graph;
  TensorT<S> out(x.value().shape(), x.value().mat().cwiseMax(S(0)));
  int px = x.node;
  return g.make(std::move(out), {px}, "relu", [px](GraphT<S>& gr, int self) {
    if (!gr.wants_grad(px)) return;
    const auto& go = gr.node(self).grad.mat();
    const auto& xv = gr.node(px).value.mat();
    gr.grad_buffer(px) +=
        go.cwiseProduct((xv.array() > S(0)).template cast<S>().matrix());
  });
}

/// Numerically stable softmax along `axis` (0 = down columns, 1 = across
/// each row). Rank-1 tensors reduce over their single axis.
template <class S>
VarT<S> softmax(VarT<S> x, int axis = -1) {
  auto& g = *x.graph;
  detail::require_rank2(x, "softmax");
  if (axis == -1) axis = x.value().rank() == 1 ? 0 : 1;
  if (x.value().rank() == 1) {
    if (axis != 0) throw std::invalid_argument("softmax: axis out of range for rank-1 tensor");
    axis = 1;  // storage is 1xn
  }
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");

  const auto& m = x.value().mat();
  Matrix<S> out(m.rows(), m.cols());
  if (axis == 1) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      auto row = m.row(i);
      S mx = row.maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (row.array() - mx).exp();
      out.row(i) = (e / e.sum()).matrix();
    }
  } else {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      auto col = m.col(j);
      S mx = col.maxCoeff();
      Eigen::Array<S, Eigen::Dynamic, 1> e = (col.array() - mx).exp();
      out.col(j) = (e / e.sum()).matrix();
    }
  }
  int px = x.node;
  TensorT<S> value(x.value().shape(), std::move(out));
  Matrix<S> saved = value.mat();
  return g.make(std::move(value), {px}, "softmax",
                [px, axis, saved = std::move(saved)](GraphT<S>& gr, int self) {
                  if (!gr.wants_grad(px)) return;
                  const auto& go = gr.node(self).grad.mat();
                  Matrix<S> gs = go.cwiseProduct(saved);
                  auto& gx = gr.grad_buffer(px);
                  if (axis == 1) {
                    for (Eigen::Index i = 0; i < saved.rows(); ++i) {
                      S dot = gs.row(i).sum();
                      gx.row(i) +=
                          gs.row(i) - (saved.row(i) * dot);
                    }
                  } else {
                    for (Eigen::Index j = 0; j < saved.cols(); ++j) {
                      S dot = gs.col(j).sum();
                      gx.col(j) += gs.col(j) - (saved.col(j) * dot);
                    }
                  }
                });
}

template <class S>
VarT<S> concat_cols(std::span<const VarT<S>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  auto& g = *parts[0].graph;
  Eigen::Index rows = parts[0].value().rows(), cols = 0;
  std::vector<int> parents;
  for (const auto& p : parts) {
    detail::same_graph(parts[0], p, "concat_cols");
    if (p.value().rows() != rows)
      throw std::invalid_argument("concat_cols: row counts differ: " +
                                  shape_str(parts[0].value().shape()) + " vs " +
                                  shape_str(p.value().shape()));
    cols += p.value().cols();
    parents.push_back(p.node);
  }
  Matrix<S> out(rows, cols);
  Eigen::Index c = 0;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    out.middleCols(c, p.value().cols()) = p.value().mat();
    widths.push_back(p.value().cols());
    c += p.value().cols();
  }
  return g.make(TensorT<S>::from_matrix(std::move(out)), parents, "concat_cols",
                [parents, widths](GraphT<S>& gr, int self) {
                  const auto& go = gr.node(self).grad.mat();
                  Eigen::Index c = 0;
                  for (size_t k = 0; k < parents.size(); ++k) {
                    if (gr.wants_grad(parents[k]))
                      gr.grad_buffer(parents[k]) += go.middleCols(c, widths[k]);
                    c += widths[k];
                  }
                });
}

template <class S>
VarT<S> concat_cols(const std::vector<VarT<S>>& parts) {
  return concat_cols(std::span<const VarT<S>>(parts));
}

template <class S>
VarT<S> concat_cols(VarT<S> a, VarT<S> b) {
  std::vector<VarT<S>> v{a, b};
  return concat_cols(std::span<const VarT<S>>(v));
}

/// Channel-wise concatenation of row features (the fusion concat).
template <class S>
VarT<S> concat_channels(VarT<S> a, VarT<S> b) {
  return concat_cols(a, b);
}

template <class S>
VarT<S> concat_rows(std::span<const VarT<S>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  auto& g = *parts[0].graph;
  Eigen::Index cols = parts[0].value().cols(), rows = 0;
  std::vector<int> parents;
  for (const auto& p : parts) {
    detail::same_graph(parts[0], p, "concat_rows");
    if (p.value().cols() != cols)
      throw std::invalid_argument("concat_rows: column counts differ: " +
                                  shape_str(parts[0].value().shape()) + " vs " +
                                  shape_str(p.value().shape()));
    rows += p.value().rows();
    parents.push_back(p.node);
  }
  Matrix<S> out(rows, cols);
  Eigen::Index r = 0;
  std::vector<Eigen::Index> heights;
  for (const auto& p : parts) {
    out.middleRows(r, p.value().rows()) = p.value().mat();
    heights.push_back(p.value().rows());
    r += p.value().rows();
  }
  return g.make(TensorT<S>::from_matrix(std::move(out)), parents, "concat_rows",
                [parents, heights](GraphT<S>& gr, int self) {
                  const auto& go = gr.node(self).grad.mat();
                  Eigen::Index r = 0;
                  for (size_t k = 0; k < parents.size(); ++k) {
                    if (gr.wants_grad(parents[k]))
                      gr.grad_buffer(parents[k]) += go.middleRows(r, heights[k]);
                    r += heights[k];
                  }
                });
}

template <class S>
VarT<S> concat_rows(const std::vector<VarT<S>>& parts) {
  return concat_rows(std::span<const VarT<S>>(parts));
}

template <class S>
VarT<S> slice_cols(VarT<S> x, Eigen::Index start, Eigen::Index len) {
  auto& g = *x.graph;
  detail::require_rank2(x, "slice_cols");
  if (start < 0 || len <= 0 || start + len > x.value().cols())
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") out of " +
                                shape_str(x.value().shape()));
  Matrix<S> out = x.value().mat().middleCols(start, len);
  int px = x.node;
  return g.make(TensorT<S>::from_matrix(std::move(out)), {px}, "slice_cols",
                [px, start, len](GraphT<S>& gr, int self) {
                  if (gr.wants_grad(px))
                    gr.grad_buffer(px).middleCols(start, len) += gr.node(self).grad.mat();
                });
}

template <class S>
VarT<S> slice_rows(VarT<S> x, Eigen::Index start, Eigen::Index len) {
  auto& g = *x.graph;
  detail::require_rank2(x, "slice_rows");
  if (start < 0 || len <= 0 || start + len > x.value().rows())
    throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") out of " +
                                shape_str(x.value().shape()));
  Matrix<S> out = x.value().mat().middleRows(start, len);
  int px = x.node;
  return g.make(TensorT<S>::from_matrix(std::move(out)), {px}, "slice_rows",
                [px, start, len](GraphT<S>& gr, int self) {
                  if (gr.wants_grad(px))
                    gr.grad_buffer(px).middleRows(start, len) += gr.node(self).grad.mat();
                });
}

template <class S>
VarT<S> reshape(VarT<S> x, Shape shape) {
  auto& g = *x.graph;
  TensorT<S> out = x.value().reshaped(shape);
  int px = x.node;
  Shape old = x.value().shape();
  return g.make(std::move(out), {px}, "reshape", [px, old](GraphT<S>& gr, int self) {
    if (gr.wants_grad(px)) gr.grad_buffer(px) += gr.node(self).grad.reshaped(old).mat();
  });
}

/// Mean over rows: {N,d} -> {1,d}.
template <class S>
VarT<S> mean_rows(VarT<S> x) {
  auto& g = *x.graph;
  detail::require_rank2(x, "mean_rows");
  Eigen::Index n = x.value().rows();
  Matrix<S> out = x.value().mat().colwise().mean();
  int px = x.node;
  return g.make(TensorT<S>::from_matrix(std::move(out)), {px}, "mean_rows",
                [px, n](GraphT<S>& gr, int self) {
                  if (!gr.wants_grad(px)) return;
                  const auto& go = gr.node(self).grad.mat();
                  gr.grad_buffer(px) += go.replicate(n, 1) / static_cast<S>(n);
                });
}

template <class S>
VarT<S> sum_all(VarT<S> x) {
  auto& g = *x.graph;
  TensorT<S> out = TensorT<S>::scalar(x.value().mat().sum());
  int px = x.node;
  return g.make(std::move(out), {px}, "sum_all", [px](GraphT<S>& gr, int self) {
    if (gr.wants_grad(px))
      gr.grad_buffer(px).array() += gr.node(self).grad.mat()(0, 0);
  });
}

template <class S>
VarT<S> mean_all(VarT<S> x) {
  auto& g = *x.graph;
  Eigen::Index n = x.value().size();
  TensorT<S> out = TensorT<S>::scalar(x.value().mat().sum() / static_cast<S>(n));
  int px = x.node;
  return g.make(std::move(out), {px}, "mean_all", [px, n](GraphT<S>& gr, int self) {
    if (gr.wants_grad(px))
      gr.grad_buffer(px).array() += gr.node(self).grad.mat()(0, 0) / static_cast<S>(n);
  });
}

/// x W + b. Bias may be omitted by passing an invalid Var.
template <class S>
VarT<S> linear(VarT<S> x, VarT<S> w, VarT<S> b) {
  VarT<S> y = matmul(x, w);
  return b.valid() ? add_rowvec(y, b) : y;
}

/// Per-row softmax cross-entropy against integer targets: {N,K} -> {N,1}.
template <class S>
VarT<S> softmax_xent(VarT<S> logits, std::vector<int> targets) {
  auto& g = *logits.graph;
  detail::require_rank2(logits, "softmax_xent");
  const auto& m = logits.value().mat();
  if (static_cast<Eigen::Index>(targets.size()) != m.rows())
    throw std::invalid_argument("softmax_xent: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(m.rows()) + " rows");
  for (int t : targets)
    if (t < 0 || t >= m.cols())
      throw std::invalid_argument("softmax_xent: target index " + std::to_string(t) +
                                  " out of group range [0, " + std::to_string(m.cols()) + ")");
  Matrix<S> probs(m.rows(), m.cols());
  Matrix<S> out(m.rows(), 1);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    S mx = m.row(i).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (m.row(i).array() - mx).exp();
    S z = e.sum();
    probs.row(i) = (e / z).matrix();
    out(i, 0) = std::log(z) + mx - m(i, targets[static_cast<size_t>(i)]);
  }
  int px = logits.node;
  return g.make(TensorT<S>::from_matrix(std::move(out)), {px}, "softmax_xent",
                [px, targets = std::move(targets), probs = std::move(probs)](GraphT<S>& gr,
                                                                             int self) {
                  if (!gr.wants_grad(px)) return;
                  const auto& go = gr.node(self).grad.mat();
                  auto& gx = gr.grad_buffer(px);
                  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                    gx.row(i) += probs.row(i) * go(i, 0);
                    gx(i, targets[static_cast<size_t>(i)]) -= go(i, 0);
                  }
                });
}

/// Per-row binary cross-entropy with logits, summed over the row:
/// {N,K} x {N,K} targets in {0,1} -> {N,1}. Stable form
/// max(x,0) - x t + log1p(exp(-|x|)).
template <class S>
VarT<S> sigmoid_bce(VarT<S> logits, TensorT<S> targets) {
  auto& g = *logits.graph;
  detail::require_rank2(logits, "sigmoid_bce");
  const auto& m = logits.value().mat();
  if (targets.shape() != logits.value().shape())
    throw std::invalid_argument("sigmoid_bce: targets " + shape_str(targets.shape()) +
                                " vs logits " + shape_str(logits.value().shape()));
  Matrix<S> out(m.rows(), 1);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    S acc = 0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      S x = m(i, j), t = targets.mat()(i, j);
      acc += std::max(x, S(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    out(i, 0) = acc;
  }
  int px = logits.node;
  return g.make(TensorT<S>::from_matrix(std::move(out)), {px}, "sigmoid_bce",
                [px, targets = std::move(targets)](GraphT<S>& gr, int self) {
                  if (!gr.wants_grad(px)) return;
                  const auto& go = gr.node(self).grad.mat();
                  const auto& x = gr.node(px).value.mat();
                  auto& gx = gr.grad_buffer(px);
                  for (Eigen::Index i = 0; i < x.rows(); ++i) {
                    for (Eigen::Index j = 0; j < x.cols(); ++j) {
                      S sig = S(1) / (S(1) + std::exp(-x(i, j)));
                      gx(i, j) += (sig - targets.mat()(i, j)) * go(i, 0);
                    }
                  }
                });
}

using GraphF = GraphT<float>;
using GraphD = GraphT<double>;
using VarF = VarT<float>;
using VarD = VarT<double>;

}  // namespace hit
