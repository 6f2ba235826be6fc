#pragma once

#include "hit/params.hpp"
#include "hit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace hit {

struct GradCheckOptions {
  double h = 1e-3;   // central-difference step; 64-bit runs use a smaller one
  double tol = 5e-2;
  int max_coords_per_tensor = 32;  // random subsample floor; small tensors get all coords
  uint64_t seed = 0x5eedc0de;
  // truncation and rounding error pull the usable step in opposite
  // directions; a parameter failing at h is retried at these steps and
  // keeps its best agreement
  std::vector<double> fallback_hs{1e-5, 1e-3, 1e-2};
};

struct GradSample {
  Eigen::Index coord;
  double analytic;
  double numeric;
  double rel_err;  // per-coordinate, diagnostic only
};

struct GradCheckRow {
  std::string name;
  int coords_checked = 0;
  double rel_err = 0.0;    // |a - n| / max(|a|, |n|, 1e-8) over the sampled gradients
  double h_used = 0.0;
  double max_coord_rel_err = 0.0;
  GradSample worst{0, 0.0, 0.0, 0.0};
  bool pass = true;
  std::vector<GradSample> samples;
};

/// Per-parameter comparison of the analytic gradient against central
/// finite differences on a random coordinate subsample.
struct GradReport {
  std::vector<GradCheckRow> rows;
  double tolerance = 0.0;
  bool pass = true;

  std::vector<std::string> failing() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
      if (!r.pass) out.push_back(r.name);
    return out;
  }
};

inline double grad_rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

namespace detail {

template <class Scalar, class F>
std::vector<double> numeric_at(F&& f, ParamSetT<Scalar>& params, TensorT<Scalar>& tensor,
                               const std::vector<Eigen::Index>& coords, double h) {
  std::vector<double> out;
  Scalar* data = tensor.data();
  for (Eigen::Index c : coords) {
    Scalar saved = data[c];
    data[c] = saved + static_cast<Scalar>(h);
    double fp = static_cast<double>(f(params));
    data[c] = saved - static_cast<Scalar>(h);
    double fm = static_cast<double>(f(params));
    data[c] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_check: f returned non-finite value");
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

inline double norm_rel_err(const std::vector<double>& analytic,
                           const std::vector<double>& numeric) {
  double da = 0, dn = 0, dd = 0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    da += analytic[i] * analytic[i];
    dn += numeric[i] * numeric[i];
    dd += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
  }
  return std::sqrt(dd) / std::max({std::sqrt(da), std::sqrt(dn), 1e-8});
}

}  // namespace detail

/// f must be a pure deterministic map ParamSet -> scalar. Each sampled
/// coordinate is perturbed by +-h and restored bit-exactly.
template <class Scalar, class F>
GradReport finite_diff_check(F&& f, ParamSetT<Scalar>& params,
                             const std::map<std::string, TensorT<Scalar>>& analytic,
                             const GradCheckOptions& opt = {}) {
  GradReport report;
  report.tolerance = opt.tol;
  Rng rng(opt.seed);
  for (auto& [name, tensor] : params.values) {
    auto it = analytic.find(name);
    if (it == analytic.end())
      throw std::invalid_argument("finite_diff_check: no analytic gradient for '" + name + "'");
    const TensorT<Scalar>& a = it->second;
    GradCheckRow row;
    row.name = name;

    Eigen::Index n = tensor.size();
    std::vector<Eigen::Index> coords;
    if (n <= opt.max_coords_per_tensor) {
      coords.resize(static_cast<size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      std::vector<Eigen::Index> all(static_cast<size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      for (int k = 0; k < opt.max_coords_per_tensor; ++k) {
        int j = rng.uniform_int(k, static_cast<int>(n) - 1);
        std::swap(all[static_cast<size_t>(k)], all[static_cast<size_t>(j)]);
        coords.push_back(all[static_cast<size_t>(k)]);
      }
    }

    std::vector<double> avals;
    for (Eigen::Index c : coords) avals.push_back(static_cast<double>(a.data()[c]));

    std::vector<double> numeric = detail::numeric_at(f, params, tensor, coords, opt.h);
    row.rel_err = detail::norm_rel_err(avals, numeric);
    row.h_used = opt.h;
    if (row.rel_err > opt.tol) {
      for (double h : opt.fallback_hs) {
        if (h == opt.h) continue;
        std::vector<double> retry = detail::numeric_at(f, params, tensor, coords, h);
        double rel = detail::norm_rel_err(avals, retry);
        if (rel < row.rel_err) {
          row.rel_err = rel;
          row.h_used = h;
          numeric = std::move(retry);
        }
        if (row.rel_err <= opt.tol) break;
      }
    }

    for (size_t i = 0; i < coords.size(); ++i) {
      GradSample s{coords[i], avals[i], numeric[i], grad_rel_err(avals[i], numeric[i])};
      row.samples.push_back(s);
      row.coords_checked++;
      if (s.rel_err > row.max_coord_rel_err) {
        row.max_coord_rel_err = s.rel_err;
        row.worst = s;
      }
    }
    row.pass = row.rel_err <= opt.tol;
    if (!row.pass) report.pass = false;
    report.rows.push_back(std::move(row));
  }
  return report;
}

/// Convenience path: builds the loss once for the analytic side, then runs
/// the finite-difference sweep with the same builder.
/// BuildLoss: VarT<Scalar>(GraphT<Scalar>&, BoundParams<Scalar>&).
template <class Scalar, class BuildLoss>
GradReport finite_diff_check(BuildLoss&& build, ParamSetT<Scalar>& params,
                             const GradCheckOptions& opt = {}) {
  std::map<std::string, TensorT<Scalar>> analytic;
  {
    GraphT<Scalar> g;
    BoundParams<Scalar> bp(g, params);
    VarT<Scalar> loss = build(g, bp);
    g.backward(loss);
    analytic = bp.collect_grads();
  }
  auto f = [&build](ParamSetT<Scalar>& p) -> double {
    GraphT<Scalar> g;
    BoundParams<Scalar> bp(g, p);
    return static_cast<double>(build(g, bp).value().item());
  };
  return finite_diff_check(f, params, analytic, opt);
}

}  // namespace hit
