#pragma once

#include "hit/gradcheck.hpp"
#include "hit/metrics.hpp"
#include "hit/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace hit {

/// Linear warm-up base*(i+1)/W over the first W iterations, then a factor
/// of 10 off at each milestone.
double lr_at(const OptimConfig& opt, int iter);

struct TrainLogEntry {
  int iter = 0;
  double loss = 0;
  double lr = 0;
  double elapsed_ms = 0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::string checkpoint_path;  // empty when ran in memory only
};

struct EvalOutcome {
  EvalReport frame;
  std::map<double, EvalReport> video;  // keyed by tube IoU threshold
  double elapsed_ms = 0;
  int frames_evaluated = 0;

  /// Mean AP over a contiguous class-id range (ablation reporting).
  double range_map(int start, int size) const;
};

/// Train/eval datasets for a config: loaded from data.dataset_dir when it
/// is set and populated, generated from the seed otherwise (and written
/// back when a directory is named).
struct DataBundle {
  Dataset train;
  Dataset eval;
};
DataBundle prepare_data(const RunConfig& cfg);

/// In-memory training; no files touched.
TrainResult train_model(const RunConfig& cfg, HitModel<float>& model, const Dataset& train_set);

/// In-memory evaluation of a model against a dataset.
EvalOutcome evaluate_model(const RunConfig& cfg, HitModel<float>& model, const Dataset& eval_set);

// CLI entry points; each echoes the resolved config into output_dir.
TrainResult run_train(const RunConfig& cfg);
EvalOutcome run_eval(const RunConfig& cfg, const std::string& checkpoint_path);
GradReport run_gradcheck(const RunConfig& cfg, bool write_report = true);
std::string run_ablate(const RunConfig& cfg, const std::string& grid);  // returns csv path

inline constexpr double kGradcheckPointAmp = 0.05;

/// 64-bit verification mode: the whole model in double, analytic backward
/// against double central differences, at a seeded generic parameter
/// point.
template <class S>
GradReport gradcheck_model(const RunConfig& cfg, const SyntheticClip& clip,
                           const GradCheckOptions& opt, uint64_t point_seed) {
  HitModel<S> model(cfg);
  perturb_params(model.params(), kGradcheckPointAmp, point_seed);
  auto build = [&](GraphT<S>& g, BoundParams<S>& bp) {
    MemoryPoolT<S> pool(cfg.model.memory_span);
    return clip_loss(model, g, bp, clip, pool, Mode::kEval, nullptr);
  };
  return finite_diff_check(build, model.params(), opt);
}

/// 32-bit mode: the float model's analytic gradients, verified against
/// central differences of the same function evaluated through the 64-bit
/// verification path. A float forward cannot resolve loss differences
/// below its own ulp, so the numeric reference is the double-cast model
/// at the float parameter point.
GradReport gradcheck_float_model(const RunConfig& cfg, const SyntheticClip& clip,
                                 const GradCheckOptions& opt, uint64_t point_seed);

/// Loads a checkpoint into a model, failing with both shapes named on any
/// mismatch against the configured architecture.
void load_into_model(HitModel<float>& model, const std::string& checkpoint_path);

}  // namespace hit
