#pragma once

#include <string>
#include <utility>
#include <vector>

#include "relight/model.hpp"

namespace relight {

// Binary checkpoint layout (all integers little-endian):
//   magic "MCNW" | u32 version | arch config block | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, 4x u32 dims (n,c,h,w),
//               raw float32 data |
//   u32 CRC-32 over every preceding byte
// The arch block is u32 fields: base_channels, resolution, stages,
// res_blocks, rerender_branch_channels, recal_reduction, ms_branch_channels,
// ms_fused_channels, flags (bit0 calibration, bit1 multiscale, bit2 instance
// norm), kernel count, then the kernel sizes.

inline constexpr uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct CheckpointData {
  ArchConfig config;
  NamedTensors tensors;

  const Tensor* find(const std::string& name) const;
};

std::vector<uint8_t> encode_checkpoint(const ArchConfig& config, const NamedTensors& tensors);
CheckpointData decode_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint(const std::string& path, const ArchConfig& config,
                     const NamedTensors& tensors);
CheckpointData load_checkpoint(const std::string& path);

// Copies generator parameters out of / into a bundle. Restoring validates
// that the stored set covers the expected names exactly once with matching
// shapes.
NamedTensors snapshot_generator(const ModelBundle& bundle);
void restore_generator(ModelBundle& bundle, const CheckpointData& data);

}  // namespace relight
