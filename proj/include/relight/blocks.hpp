#pragma once

#include <optional>
#include <string>
#include <vector>

#include "relight/ops.hpp"
#include "relight/params.hpp"
#include "relight/rng.hpp"

namespace relight {

enum class Norm { none, instance };

// Weight initialization used everywhere: N(0, 0.02^2) weights, zero biases.
inline constexpr double kInitStd = 0.02;

struct BlockOptions {
  Norm norm = Norm::instance;
  bool calibration = true;
};

template <typename T>
struct ConvLayer {
  TensorT<T> weight;  // (c_out, c_in, k, k)
  TensorT<T> bias;    // (1, c_out, 1, 1)
  int stride = 1;
  int pad = 0;
};

template <typename T>
struct DeconvLayer {
  TensorT<T> weight;  // (c_in, c_out, k, k)
  TensorT<T> bias;    // (1, c_out, 1, 1)
  int stride = 1;
  int pad = 0;
};

template <typename T>
ConvLayer<T> make_conv(ParamStoreT<T>& store, Rng& rng, const std::string& name, int c_in,
                       int c_out, int k, int stride, int pad);

template <typename T>
DeconvLayer<T> make_deconv(ParamStoreT<T>& store, Rng& rng, const std::string& name, int c_in,
                           int c_out, int k, int stride, int pad);

// conv / deconv followed by optional normalization and activation.
template <typename T>
TensorT<T> apply(TapeT<T>& tape, const ConvLayer<T>& l, const TensorT<T>& x,
                 Norm norm = Norm::none, std::optional<Activation> act = std::nullopt);

template <typename T>
TensorT<T> apply(TapeT<T>& tape, const DeconvLayer<T>& l, const TensorT<T>& x,
                 Norm norm = Norm::none, std::optional<Activation> act = std::nullopt);

// Encoder block: halves the spatial extent and doubles the channel count.
// A strided 3x3 conv forms the small-scale feature, a 4x4 deconv lifts it
// back, a sigmoid gate derived from the block input rescales the lifted
// feature, and a second strided conv folds it into the small-scale path.
template <typename T>
struct GatedDownBlock {
  ConvLayer<T> down;    // 3x3 s2 p1: c -> 2c
  DeconvLayer<T> up;    // 4x4 s2 p1: 2c -> c
  ConvLayer<T> gate;    // 1x1: c -> c (absent when calibration is disabled)
  ConvLayer<T> out;     // 3x3 s2 p1: c -> 2c
  Norm norm = Norm::instance;
  bool calibrated = true;

  static GatedDownBlock make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                             int in_channels, const BlockOptions& opt);
  TensorT<T> forward(TapeT<T>& tape, const TensorT<T>& x) const;
};

// Decoder mirror: doubles the spatial extent and halves the channel count.
template <typename T>
struct GatedUpBlock {
  DeconvLayer<T> up1;   // 4x4 s2 p1: c -> c/2
  ConvLayer<T> down;    // 3x3 s2 p1: c/2 -> c
  ConvLayer<T> gate;    // 1x1: c -> c
  DeconvLayer<T> up2;   // 4x4 s2 p1: c -> c/2
  Norm norm = Norm::instance;
  bool calibrated = true;

  static GatedUpBlock make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                           int in_channels, const BlockOptions& opt);
  TensorT<T> forward(TapeT<T>& tape, const TensorT<T>& x) const;
};

// y = x + conv(act(norm(conv(x)))); channel and spatial shape preserved.
template <typename T>
struct ResidualUnit {
  ConvLayer<T> conv1;
  ConvLayer<T> conv2;
  Norm norm = Norm::instance;

  static ResidualUnit make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                           int channels, Norm norm);
  TensorT<T> forward(TapeT<T>& tape, const TensorT<T>& x) const;
};

template <typename T>
struct ResidualStack {
  std::vector<ResidualUnit<T>> units;

  static ResidualStack make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                            int channels, int count, Norm norm);
  TensorT<T> forward(TapeT<T>& tape, const TensorT<T>& x) const;
};

// Squeeze/excite gating: per-channel sigmoid weights from the pooled feature.
template <typename T>
struct ChannelRecalibration {
  ConvLayer<T> squeeze;  // 1x1: c -> c/r
  ConvLayer<T> excite;   // 1x1: c/r -> c

  static ChannelRecalibration make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                                   int channels, int reduction);
  TensorT<T> forward(TapeT<T>& tape, const TensorT<T>& x) const;
};

// PatchGAN-style critic: four stride-2 4x4 convs (64..512 channels,
// leaky-relu, instance norm except the first) and a 1-channel score head.
template <typename T>
struct PatchDiscriminator {
  std::vector<ConvLayer<T>> layers;
  ConvLayer<T> head;

  static PatchDiscriminator make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix);
  TensorT<T> forward(TapeT<T>& tape, const TensorT<T>& image) const;
};

// Closed-form parameter counts (weights + biases); regression-tested against
// store enumeration.
int64_t conv_param_count(int c_in, int c_out, int k);
int64_t gated_down_param_count(int in_channels, bool calibrated);
int64_t gated_up_param_count(int in_channels, bool calibrated);
int64_t residual_stack_param_count(int channels, int count);
int64_t recalibration_param_count(int channels, int reduction);
int64_t discriminator_param_count();

}  // namespace relight
