#pragma once

#include "hit/fusion.hpp"
#include "hit/model_config.hpp"
#include "hit/synth.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace hit {

struct DataConfig {
  TaskSpec task;
  GeometryConfig geometry;
  int train_clips = 200;
  int eval_clips = 50;
  uint64_t seed = 1234;
  std::string dataset_dir;  // optional on-disk materialization
  float object_score_thresh = 0.25f;
  float jitter = 0.05f;
};

struct OptimConfig {
  double lr = 0.02;
  double momentum = 0.9;
  int warmup_iters = 200;  // 10% of the schedule, as in the training recipe
  std::vector<int> milestones{1000, 1400};
  int iterations = 2000;
  int batch_size = 4;
};

struct EvalConfig {
  double frame_iou = 0.5;
  std::vector<double> video_ious{0.2, 0.5};
};

/// Fully resolved run configuration. Omitted fields fall back to these
/// defaults; the resolved form is echoed to the output directory before a
/// run starts.
struct RunConfig {
  ModelConfig model;
  DataConfig data;
  OptimConfig optimizer;
  EvalConfig eval;
  LabelGroups label_groups;
  std::string output_dir = "out";
};

RunConfig default_config();

/// Defaults overlaid with a (possibly partial) JSON document.
RunConfig resolve_config(const nlohmann::json& overrides);

/// File + dotted command-line overrides ("a.b.c=value") + optional seed
/// override (the HIT_SEED environment variable). Empty path = defaults.
RunConfig resolve_config_file(const std::string& path,
                              const std::vector<std::string>& dotted,
                              std::optional<uint64_t> seed_override);

nlohmann::json config_to_json(const RunConfig& cfg);

void validate_config(const RunConfig& cfg);

/// Throws when the configured label groups cannot express the synthetic
/// task's classes.
void require_task_coherence(const RunConfig& cfg);

}  // namespace hit
