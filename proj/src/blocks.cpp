#include "relight/blocks.hpp"

namespace relight {

namespace {

template <typename T>
TensorT<T> post(TapeT<T>& tape, TensorT<T> y, Norm norm, std::optional<Activation> act) {
  if (norm == Norm::instance) y = ops::instance_norm(tape, y);
  if (act) y = ops::activation(tape, y, *act);
  return y;
}

}  // namespace

template <typename T>
ConvLayer<T> make_conv(ParamStoreT<T>& store, Rng& rng, const std::string& name, int c_in,
                       int c_out, int k, int stride, int pad) {
  ConvLayer<T> l;
  l.weight = store.add(name + ".weight",
                       TensorT<T>::randn(Shape{c_out, c_in, k, k}, rng, kInitStd));
  l.bias = store.add(name + ".bias", TensorT<T>::zeros(Shape{1, c_out, 1, 1}));
  l.stride = stride;
  l.pad = pad;
  return l;
}

template <typename T>
DeconvLayer<T> make_deconv(ParamStoreT<T>& store, Rng& rng, const std::string& name, int c_in,
                           int c_out, int k, int stride, int pad) {
  DeconvLayer<T> l;
  l.weight = store.add(name + ".weight",
                       TensorT<T>::randn(Shape{c_in, c_out, k, k}, rng, kInitStd));
  l.bias = store.add(name + ".bias", TensorT<T>::zeros(Shape{1, c_out, 1, 1}));
  l.stride = stride;
  l.pad = pad;
  return l;
}

template <typename T>
TensorT<T> apply(TapeT<T>& tape, const ConvLayer<T>& l, const TensorT<T>& x, Norm norm,
                 std::optional<Activation> act) {
  return post(tape, ops::conv2d(tape, x, l.weight, l.bias, l.stride, l.pad), norm, act);
}

template <typename T>
TensorT<T> apply(TapeT<T>& tape, const DeconvLayer<T>& l, const TensorT<T>& x, Norm norm,
                 std::optional<Activation> act) {
  return post(tape, ops::deconv2d(tape, x, l.weight, l.bias, l.stride, l.pad), norm, act);
}

// ---------------------------------------------------------------------------
// GatedDownBlock

template <typename T>
GatedDownBlock<T> GatedDownBlock<T>::make(ParamStoreT<T>& store, Rng& rng,
                                          const std::string& prefix, int in_channels,
                                          const BlockOptions& opt) {
  GatedDownBlock<T> b;
  b.norm = opt.norm;
  b.calibrated = opt.calibration;
  b.down = make_conv(store, rng, prefix + ".down", in_channels, 2 * in_channels, 3, 2, 1);
  b.up = make_deconv(store, rng, prefix + ".up", 2 * in_channels, in_channels, 4, 2, 1);
  if (b.calibrated)
    b.gate = make_conv(store, rng, prefix + ".gate", in_channels, in_channels, 1, 1, 0);
  b.out = make_conv(store, rng, prefix + ".out", in_channels, 2 * in_channels, 3, 2, 1);
  return b;
}

template <typename T>
TensorT<T> GatedDownBlock<T>::forward(TapeT<T>& tape, const TensorT<T>& x) const {
  const Shape s = x.shape();
  check(s.h % 2 == 0 && s.w % 2 == 0, "gated down block: spatial dims must be even, got ",
        s.str());
  auto f_lr = apply(tape, down, x, norm, Activation::relu);
  auto f_hr = apply(tape, up, f_lr, norm, Activation::relu);
  auto calibrated_hr = f_hr;
  if (calibrated) {
    auto weight = apply(tape, gate, x, Norm::none, Activation::sigmoid);
    calibrated_hr = ops::mul(tape, weight, f_hr);
  }
  return ops::add(tape, apply(tape, out, calibrated_hr, norm, std::nullopt), f_lr);
}

// ---------------------------------------------------------------------------
// GatedUpBlock

template <typename T>
GatedUpBlock<T> GatedUpBlock<T>::make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                                      int in_channels, const BlockOptions& opt) {
  check(in_channels % 2 == 0, "gated up block: channel count must be even, got ", in_channels);
  GatedUpBlock<T> b;
  b.norm = opt.norm;
  b.calibrated = opt.calibration;
  b.up1 = make_deconv(store, rng, prefix + ".up1", in_channels, in_channels / 2, 4, 2, 1);
  b.down = make_conv(store, rng, prefix + ".down", in_channels / 2, in_channels, 3, 2, 1);
  if (b.calibrated)
    b.gate = make_conv(store, rng, prefix + ".gate", in_channels, in_channels, 1, 1, 0);
  b.up2 = make_deconv(store, rng, prefix + ".up2", in_channels, in_channels / 2, 4, 2, 1);
  return b;
}

template <typename T>
TensorT<T> GatedUpBlock<T>::forward(TapeT<T>& tape, const TensorT<T>& x) const {
  check(x.shape().c % 2 == 0, "gated up block: channel count must be even, got ",
        x.shape().str());
  auto f_hr = apply(tape, up1, x, norm, Activation::relu);
  auto f_lr = apply(tape, down, f_hr, norm, Activation::relu);
  auto calibrated_lr = f_lr;
  if (calibrated) {
    auto weight = apply(tape, gate, x, Norm::none, Activation::sigmoid);
    calibrated_lr = ops::mul(tape, weight, f_lr);
  }
  return ops::add(tape, apply(tape, up2, calibrated_lr, norm, std::nullopt), f_hr);
}

// ---------------------------------------------------------------------------
// Residual stack

template <typename T>
ResidualUnit<T> ResidualUnit<T>::make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                                      int channels, Norm norm) {
  ResidualUnit<T> u;
  u.norm = norm;
  u.conv1 = make_conv(store, rng, prefix + ".conv1", channels, channels, 3, 1, 1);
  u.conv2 = make_conv(store, rng, prefix + ".conv2", channels, channels, 3, 1, 1);
  return u;
}

template <typename T>
TensorT<T> ResidualUnit<T>::forward(TapeT<T>& tape, const TensorT<T>& x) const {
  auto h = apply(tape, conv1, x, norm, Activation::relu);
  return ops::add(tape, x, apply(tape, conv2, h, Norm::none, std::nullopt));
}

template <typename T>
ResidualStack<T> ResidualStack<T>::make(ParamStoreT<T>& store, Rng& rng,
                                        const std::string& prefix, int channels, int count,
                                        Norm norm) {
  ResidualStack<T> s;
  for (int i = 0; i < count; ++i)
    s.units.push_back(
        ResidualUnit<T>::make(store, rng, prefix + ".res" + std::to_string(i + 1), channels, norm));
  return s;
}

template <typename T>
TensorT<T> ResidualStack<T>::forward(TapeT<T>& tape, const TensorT<T>& x) const {
  auto y = x;
  for (const auto& u : units) y = u.forward(tape, y);
  return y;
}

// ---------------------------------------------------------------------------
// Channel recalibration

template <typename T>
ChannelRecalibration<T> ChannelRecalibration<T>::make(ParamStoreT<T>& store, Rng& rng,
                                                      const std::string& prefix, int channels,
                                                      int reduction) {
  check(reduction >= 1 && channels % reduction == 0, "recalibration: channels (", channels,
        ") not divisible by reduction (", reduction, ")");
  ChannelRecalibration<T> m;
  m.squeeze = make_conv(store, rng, prefix + ".squeeze", channels, channels / reduction, 1, 1, 0);
  m.excite = make_conv(store, rng, prefix + ".excite", channels / reduction, channels, 1, 1, 0);
  return m;
}

template <typename T>
TensorT<T> ChannelRecalibration<T>::forward(TapeT<T>& tape, const TensorT<T>& x) const {
  auto pooled = ops::global_avg_pool(tape, x);
  auto hidden = apply(tape, squeeze, pooled, Norm::none, Activation::relu);
  auto gates = apply(tape, excite, hidden, Norm::none, Activation::sigmoid);
  return ops::scale_channels(tape, x, gates);
}

// ---------------------------------------------------------------------------
// Patch discriminator

template <typename T>
PatchDiscriminator<T> PatchDiscriminator<T>::make(ParamStoreT<T>& store, Rng& rng,
                                                  const std::string& prefix) {
  PatchDiscriminator<T> d;
  const int widths[] = {3, 64, 128, 256, 512};
  for (int i = 0; i < 4; ++i)
    d.layers.push_back(make_conv(store, rng, prefix + ".layer" + std::to_string(i + 1),
                                 widths[i], widths[i + 1], 4, 2, 1));
  d.head = make_conv(store, rng, prefix + ".head", 512, 1, 3, 1, 1);
  return d;
}

template <typename T>
TensorT<T> PatchDiscriminator<T>::forward(TapeT<T>& tape, const TensorT<T>& image) const {
  const Shape s = image.shape();
  check(s.c == 3, "discriminator: expected 3-channel image, got ", s.str());
  check(s.h >= 16 && s.w >= 16, "discriminator: input ", s.str(),
        " below the 16x16 receptive-field minimum");
  auto h = apply(tape, layers[0], image, Norm::none, Activation::leaky_relu);
  for (size_t i = 1; i < layers.size(); ++i)
    h = apply(tape, layers[i], h, Norm::instance, Activation::leaky_relu);
  return apply(tape, head, h, Norm::none, std::nullopt);
}

// ---------------------------------------------------------------------------
// Parameter counting. conv(ci -> co, k): co*ci*k^2 weights + co biases.

int64_t conv_param_count(int c_in, int c_out, int k) {
  return int64_t(c_out) * c_in * k * k + c_out;
}

int64_t gated_down_param_count(int c, bool calibrated) {
  int64_t total = conv_param_count(c, 2 * c, 3)      // down
                  + conv_param_count(2 * c, c, 4)    // up (deconv, same count)
                  + conv_param_count(c, 2 * c, 3);   // out
  if (calibrated) total += conv_param_count(c, c, 1);
  return total;
}

int64_t gated_up_param_count(int c, bool calibrated) {
  int64_t total = conv_param_count(c, c / 2, 4)      // up1
                  + conv_param_count(c / 2, c, 3)    // down
                  + conv_param_count(c, c / 2, 4);   // up2
  if (calibrated) total += conv_param_count(c, c, 1);
  return total;
}

int64_t residual_stack_param_count(int channels, int count) {
  return int64_t(count) * 2 * conv_param_count(channels, channels, 3);
}

int64_t recalibration_param_count(int channels, int reduction) {
  return conv_param_count(channels, channels / reduction, 1) +
         conv_param_count(channels / reduction, channels, 1);
}

int64_t discriminator_param_count() {
  return conv_param_count(3, 64, 4) + conv_param_count(64, 128, 4) +
         conv_param_count(128, 256, 4) + conv_param_count(256, 512, 4) +
         conv_param_count(512, 1, 3);
}

// ---------------------------------------------------------------------------

#define RELIGHT_INSTANTIATE_BLOCKS(T)                                                          \
  template ConvLayer<T> make_conv<T>(ParamStoreT<T>&, Rng&, const std::string&, int, int, int, \
                                     int, int);                                                \
  template DeconvLayer<T> make_deconv<T>(ParamStoreT<T>&, Rng&, const std::string&, int, int,  \
                                         int, int, int);                                       \
  template TensorT<T> apply<T>(TapeT<T>&, const ConvLayer<T>&, const TensorT<T>&, Norm,        \
                               std::optional<Activation>);                                     \
  template TensorT<T> apply<T>(TapeT<T>&, const DeconvLayer<T>&, const TensorT<T>&, Norm,      \
                               std::optional<Activation>);                                     \
  template struct GatedDownBlock<T>;                                                          \
  template struct GatedUpBlock<T>;                                                             \
  template struct ResidualUnit<T>;                                                             \
  template struct ResidualStack<T>;                                                            \
  template struct ChannelRecalibration<T>;                                                     \
  template struct PatchDiscriminator<T>;

RELIGHT_INSTANTIATE_BLOCKS(float)
RELIGHT_INSTANTIATE_BLOCKS(double)

}  // namespace relight
