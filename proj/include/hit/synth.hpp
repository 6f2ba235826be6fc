#pragma once

#include "hit/fusion.hpp"
#include "hit/geometry.hpp"
#include "hit/rng.hpp"
#include "hit/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace hit {

/// Synthetic task definition. Class ids are laid out as
/// [hand | pose | temporal]:
///   - hand-determined classes: label = quadrant of the hand-box center
///     relative to the person-box center (4 classes when enabled);
///   - pose-determined classes: label = nearest of pose_classes fixed
///     keypoint templates;
///   - temporal classes: label = sign of the person-box horizontal
///     displacement between t-1 and t+1 (left / neutral / right).
struct TaskSpec {
  int hand_classes = 4;      // 0 or 4
  int pose_classes = 4;      // >= 0 templates
  int temporal_classes = 3;  // 0 or 3
  float noise_sigma = 0.1f;
  float wrist_suppress_prob = 0.0f;

  int total_classes() const { return hand_classes + pose_classes + temporal_classes; }
  int pose_class_base() const { return hand_classes; }
  int temporal_class_base() const { return hand_classes + pose_classes; }
};

struct GeometryConfig {
  int channels = 32;
  int height = 16;
  int width = 16;
  int frames = 8;  // T keyframes per clip
  int max_persons = 3;
  float hand_margin = 0.1f;  // matches the entity-selection hand box
};

struct PersonTruth {
  BBox box;
  Keypoints kps;
  BBox hand_box;  // derived from the emitted wrists with the configured margin
  int hand_class = -1;
  int pose_class = -1;
  int temporal_class = -1;
};

struct FrameTruth {
  TensorF grid;  // {C, H, W}
  std::vector<PersonTruth> persons;
  std::vector<ScoredBox> objects;
};

struct SyntheticClip {
  std::string clip_id;
  uint64_t generator_seed = 0;
  std::vector<FrameTruth> frames;
};

/// Deterministic clip generation: bit-identical for a fixed (seed, spec,
/// geometry) across runs and platforms.
SyntheticClip generate_clip(uint64_t seed, const TaskSpec& spec, const GeometryConfig& geo,
                            std::string clip_id = "");

struct OracleLabels {
  int hand = -1;
  int pose = -1;
  int temporal = -1;
};

/// Bayes-optimal labels recomputed from the annotation geometry alone
/// (never from the generator's stored labels).
OracleLabels oracle_label(const SyntheticClip& clip, int frame, int person, const TaskSpec& spec,
                          const GeometryConfig& geo);

/// Fixed per-class keypoint template: 17 box-relative (fx, fy) offsets.
/// Wrists (joints 9, 10) are overridden by the hand placement when hand
/// classes are enabled.
std::array<std::array<float, 2>, Keypoints::kJointCount> pose_template(int pose_class);

/// Channel value of the class signature planted inside ground-truth hand
/// boxes. Zero on the reserved position/time channels.
float hand_signature_value(int channel, int hand_class, const GeometryConfig& geo);

/// Nearest-signature classification of an ROI-averaged hand feature; the
/// identifiability reference for hand classes.
int nearest_hand_signature(const TensorF& grid, const BBox& hand_box, const TaskSpec& spec,
                           const GeometryConfig& geo);

/// Label groups matching the synthetic class layout (softmax per kind,
/// pose group marked).
LabelGroups task_label_groups(const TaskSpec& spec);

/// Per-person training targets in task_label_groups order.
PersonTargets person_targets(const PersonTruth& truth, const TaskSpec& spec);

// ---------------------------------------------------------------------------
// entity selection
// ---------------------------------------------------------------------------

enum class Mode { kTrain, kEval };

struct SelectConfig {
  float score_thresh = 0.25f;
  float jitter = 0.05f;
  float hand_margin = 0.1f;
  float wrist_conf_floor = 0.3f;
};

struct SelectedEntities {
  std::vector<BBox> person_boxes;  // jittered in train mode
  std::vector<BBox> hand_boxes;    // per person; low-confidence wrists fall back to the person box
  std::vector<ScoredBox> objects;  // score- and overlap-filtered
  std::vector<Keypoints> keypoints;  // coordinates matched to the annotated person box
};

/// Applies the object filter, hand-box derivation and (train mode only)
/// jitter augmentation. jitter_rng may be null in eval mode.
SelectedEntities select_entities(const FrameTruth& frame, Mode mode, const SelectConfig& cfg,
                                 Rng* jitter_rng);

// ---------------------------------------------------------------------------
// dataset serialization: clips/<id>.bin (manifest+blob container) +
// clips/<id>.json sidecar + dataset.json index
// ---------------------------------------------------------------------------

struct Dataset {
  TaskSpec spec;
  GeometryConfig geo;
  uint64_t seed = 0;
  std::vector<SyntheticClip> clips;
};

Dataset build_dataset(const TaskSpec& spec, const GeometryConfig& geo, uint64_t seed, int count,
                      const std::string& prefix);

void save_clip(const std::string& dir, const SyntheticClip& clip);
SyntheticClip load_clip(const std::string& dir, const std::string& clip_id);
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace hit
