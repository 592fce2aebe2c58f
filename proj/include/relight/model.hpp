#pragma once

#include <string>
#include <vector>

#include "relight/blocks.hpp"

namespace relight {

// Architecture constants for the four-stage ladder. The scale ladder halves
// the spatial extent and doubles channels at each encoder stage, so the
// resolution must be divisible by 2^stages.
struct ArchConfig {
  int base_channels = 32;  // feature width at full resolution
  int resolution = 64;     // square input size
  int stages = 4;
  int res_blocks = 9;
  std::vector<int> rerender_kernels{3, 7, 13, 19, 25};
  int rerender_branch_channels = 16;
  int recal_reduction = 4;
  int ms_branch_channels = 32;
  int ms_fused_channels = 32;
  bool calibration = true;  // sigmoid gates in the down/up blocks
  bool multiscale = true;   // decoder multi-scale fusion in the structure net
  Norm norm = Norm::instance;

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

// Structure-recovery subnetwork. Produces a full-resolution feature map plus
// a reconstructed shadow-free image.
template <typename T>
struct SceneNetT {
  ConvLayer<T> stem;  // 7x7 p3: 3 -> c0
  std::vector<GatedDownBlock<T>> enc;
  ResidualStack<T> res;
  std::vector<GatedUpBlock<T>> dec;
  DeconvLayer<T> ms1;  // 8x8 s8: 8c0 -> ms_branch (from the first decoder stage)
  DeconvLayer<T> ms2;  // 4x4 s4: 4c0 -> ms_branch
  DeconvLayer<T> ms3;  // 4x4 s2 p1: 2c0 -> ms_branch
  ConvLayer<T> fuse;   // 1x1: 3*ms_branch + c0 -> ms_fused
  ConvLayer<T> reduce;  // 3x3 p1: (ms_fused|c0) + c0 -> c0
  ConvLayer<T> head;   // 7x7 p3: c0 -> 3
  Norm norm = Norm::instance;
  bool multiscale = true;

  struct Out {
    TensorT<T> feature;
    TensorT<T> image;
  };
  static SceneNetT make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                        const ArchConfig& cfg);
  Out forward(TapeT<T>& tape, const TensorT<T>& x) const;
};

// Light-effect subnetwork: same ladder without skip or multi-scale fusion.
template <typename T>
struct ShadowNetT {
  ConvLayer<T> stem;
  std::vector<GatedDownBlock<T>> enc;
  ResidualStack<T> res;
  std::vector<GatedUpBlock<T>> dec;
  ConvLayer<T> head;
  Norm norm = Norm::instance;

  struct Out {
    TensorT<T> feature;
    TensorT<T> image;
  };
  static ShadowNetT make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                         const ArchConfig& cfg);
  Out forward(TapeT<T>& tape, const TensorT<T>& x) const;
};

// Fuses the two feature maps and renders the output image: parallel convs
// with kernel sizes 3..25, channel recalibration, then a 7x7 image head.
template <typename T>
struct RerenderNetT {
  std::vector<ConvLayer<T>> branches;
  ChannelRecalibration<T> recal;
  ConvLayer<T> head;
  Norm norm = Norm::instance;

  static RerenderNetT make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                           const ArchConfig& cfg);
  TensorT<T> forward(TapeT<T>& tape, const TensorT<T>& scene_feature,
                     const TensorT<T>& shadow_feature) const;
};

template <typename T>
struct ModelBundleT {
  ArchConfig config;
  ParamStoreT<T> gen;   // scene + shadow + rerender parameters
  ParamStoreT<T> disc;  // both discriminators
  SceneNetT<T> scene;
  ShadowNetT<T> shadow;
  RerenderNetT<T> rerender;
  PatchDiscriminator<T> disc_scene;
  PatchDiscriminator<T> disc_shadow;

  static ModelBundleT build(const ArchConfig& cfg, uint64_t seed);

  struct Outputs {
    TensorT<T> y_hat;        // transfer result
    TensorT<T> shadow_free;  // scene net reconstruction
    TensorT<T> relit;        // shadow net estimate
  };
  Outputs full_forward(TapeT<T>& tape, const TensorT<T>& x) const;

  void check_input(const TensorT<T>& x) const;
};

using ModelBundle = ModelBundleT<float>;

// Closed-form generator / discriminator parameter counts for an ArchConfig.
int64_t scene_net_param_count(const ArchConfig& cfg);
int64_t shadow_net_param_count(const ArchConfig& cfg);
int64_t rerender_net_param_count(const ArchConfig& cfg);
int64_t generator_param_count(const ArchConfig& cfg);

}  // namespace relight
