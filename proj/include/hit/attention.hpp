#pragma once

#include "hit/params.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hit {

/// Captured attention probabilities (one row-stochastic {N,M} matrix per
/// head per call), for invariant tests and diagnostics.
template <class S>
struct AttnTrace {
  std::vector<Matrix<S>> probs;
};

struct AttentionDims {
  Eigen::Index d_query = 0;
  Eigen::Index d_context = 0;
  Eigen::Index d_model = 0;
  int heads = 1;
};

inline void register_attention(auto& ps, const std::string& prefix, const AttentionDims& dims) {
  if (dims.d_model % dims.heads != 0)
    throw std::invalid_argument("attention '" + prefix + "': d_model " +
                                std::to_string(dims.d_model) + " not divisible by " +
                                std::to_string(dims.heads) + " heads");
  // w_q / w_k / w_v are pure linear maps; a key bias would be a dead
  // parameter (softmax cancels per-row constant shifts) and a value bias
  // is redundant with the output bias
  double bq = 1.0 / std::sqrt(static_cast<double>(dims.d_query));
  double bc = 1.0 / std::sqrt(static_cast<double>(dims.d_context));
  ps.add_uniform(prefix + ".q.w", {dims.d_query, dims.d_model}, -bq, bq);
  ps.add_uniform(prefix + ".k.w", {dims.d_context, dims.d_model}, -bc, bc);
  ps.add_uniform(prefix + ".v.w", {dims.d_context, dims.d_model}, -bc, bc);
  ps.add_linear(prefix + ".out", dims.d_model, dims.d_query);
}

/// Interaction unit A(*): multi-head cross-attention from query rows to a
/// context set, scaled by sqrt(d_model / heads), heads concatenated,
/// output-mapped and residually added to the queries. Output width equals
/// the query width.
template <class S>
VarT<S> cross_attention(BoundParams<S>& bp, const std::string& prefix, VarT<S> query_rows,
                        VarT<S> context_rows, int heads, AttnTrace<S>* trace = nullptr) {
  VarT<S> q = matmul(query_rows, bp(prefix + ".q.w"));
  VarT<S> k = matmul(context_rows, bp(prefix + ".k.w"));
  VarT<S> v = matmul(context_rows, bp(prefix + ".v.w"));
  Eigen::Index d_model = q.value().cols();
  if (d_model % heads != 0)
    throw std::invalid_argument("attention '" + prefix + "': d_model not divisible by heads");
  Eigen::Index dh = d_model / heads;
  S scaling = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<VarT<S>> head_outs;
  for (int h = 0; h < heads; ++h) {
    VarT<S> qh = slice_cols(q, h * dh, dh);
    VarT<S> kh = slice_cols(k, h * dh, dh);
    VarT<S> vh = slice_cols(v, h * dh, dh);
    VarT<S> logits = scale(matmul(qh, transpose(kh)), scaling);
    VarT<S> probs = softmax(logits, 1);
    if (trace) trace->probs.push_back(probs.value().mat());
    head_outs.push_back(matmul(probs, vh));
  }
  VarT<S> merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  VarT<S> mapped = linear(merged, bp(prefix + ".out.w"), bp(prefix + ".out.b"));
  return add(mapped, query_rows);
}

}  // namespace hit
