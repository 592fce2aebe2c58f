#pragma once

#include <string>

#include "relight/losses.hpp"
#include "relight/model.hpp"

namespace relight {

// Flat key=value training configuration ('#' starts a comment). Defaults are
// the desk-scale preset: width 8, resolution 64, batch 2.
struct TrainConfig {
  int steps = 500;
  int batch_size = 2;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  uint64_t seed = 7;
  int checkpoint_interval = 0;  // 0: only the final checkpoint
  double resize_factor = 0.5;   // corpus-to-training scale; 1, 0.5, or 0.25
  int base_channels = 8;
  int resolution = 64;  // training resolution after resize
  int ms_branch_channels = 32;
  int ms_fused_channels = 32;
  bool adversarial = true;
  int max_pairs = 0;  // 0: use every manifest pair
  LossWeights weights;

  void validate() const;
  ArchConfig arch(bool ablate_cal = false, bool ablate_ms = false) const;
  std::string serialize() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
};

}  // namespace relight
