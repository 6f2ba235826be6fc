#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>

namespace hit {

/// Architecture knobs shared by the stream, fusion and head builders.
/// Defaults are the desk-scale configuration.
struct ModelConfig {
  Eigen::Index d = 64;    // RGB stream width d_r
  Eigen::Index d_p = 64;  // pose stream width
  int heads = 2;
  int depth = 2;          // cascade layers per stream
  int pose_blocks = 2;    // encoder depth of f
  int memory_span = 30;   // S; the window is 2S+1
  Eigen::Index roi_size = 4;
  double theta_init = -5.0 * std::log(10.0);  // uniform softmax at init
  std::string ima = "fresh";                  // fresh | cached | off
  std::string fusion_mode = "afm";            // sum | concat | weighted_sum | average | afm
  std::string fusion_placement = "before";    // before | after (temporal interaction)
  bool unit_objects = true;
  bool unit_hands = true;
  bool unit_temporal = true;
  bool unit_rgb = true;
  bool unit_pose = true;
  float hand_margin = 0.1f;
  float wrist_conf_floor = 0.3f;

  bool ima_enabled() const { return ima != "off"; }
  bool ima_cached() const { return ima == "cached"; }
};

}  // namespace hit
