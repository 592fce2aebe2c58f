#include "relight/model.hpp"

namespace relight {

void ArchConfig::validate() const {
  const int factor = 1 << stages;
  check(stages == 4, "arch: ladder depth is fixed at 4, got ", stages);
  check(resolution >= factor && resolution % factor == 0, "arch: resolution ", resolution,
        " must be a multiple of ", factor);
  check(base_channels >= 4 && base_channels % 4 == 0, "arch: base channels ", base_channels,
        " must be a positive multiple of 4");
  check(res_blocks >= 1, "arch: residual block count must be >= 1, got ", res_blocks);
  check(!rerender_kernels.empty(), "arch: re-render kernel set must not be empty");
  for (int k : rerender_kernels)
    check(k >= 1 && k % 2 == 1, "arch: re-render kernels must be odd, got ", k);
  check(rerender_branch_channels >= 1, "arch: re-render branch channels must be >= 1");
  const int cat = int(rerender_kernels.size()) * rerender_branch_channels;
  check(recal_reduction >= 1 && cat % recal_reduction == 0, "arch: concatenated re-render width ",
        cat, " not divisible by recalibration reduction ", recal_reduction);
  check(ms_branch_channels >= 1 && ms_fused_channels >= 1,
        "arch: multi-scale channel widths must be >= 1");
}

// ---------------------------------------------------------------------------
// Scene reconversion net

template <typename T>
SceneNetT<T> SceneNetT<T>::make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                                const ArchConfig& cfg) {
  SceneNetT<T> net;
  net.norm = cfg.norm;
  net.multiscale = cfg.multiscale;
  const int c0 = cfg.base_channels;
  const BlockOptions opt{cfg.norm, cfg.calibration};
  net.stem = make_conv(store, rng, prefix + ".stem", 3, c0, 7, 1, 3);
  int c = c0;
  for (int i = 0; i < cfg.stages; ++i) {
    net.enc.push_back(
        GatedDownBlock<T>::make(store, rng, prefix + ".enc" + std::to_string(i + 1), c, opt));
    c *= 2;
  }
  net.res = ResidualStack<T>::make(store, rng, prefix, c, cfg.res_blocks, cfg.norm);
  for (int i = 0; i < cfg.stages; ++i) {
    net.dec.push_back(
        GatedUpBlock<T>::make(store, rng, prefix + ".dec" + std::to_string(i + 1), c, opt));
    c /= 2;
  }
  int fused_channels = c0;
  if (cfg.multiscale) {
    net.ms1 = make_deconv(store, rng, prefix + ".ms1", 8 * c0, cfg.ms_branch_channels, 8, 8, 0);
    net.ms2 = make_deconv(store, rng, prefix + ".ms2", 4 * c0, cfg.ms_branch_channels, 4, 4, 0);
    net.ms3 = make_deconv(store, rng, prefix + ".ms3", 2 * c0, cfg.ms_branch_channels, 4, 2, 1);
    net.fuse = make_conv(store, rng, prefix + ".fuse", 3 * cfg.ms_branch_channels + c0,
                         cfg.ms_fused_channels, 1, 1, 0);
    fused_channels = cfg.ms_fused_channels;
  }
  net.reduce = make_conv(store, rng, prefix + ".reduce", fused_channels + c0, c0, 3, 1, 1);
  net.head = make_conv(store, rng, prefix + ".head", c0, 3, 7, 1, 3);
  return net;
}

// Normalization lives inside the gated blocks and the residual stack only.
// The stem / fusion / branch convs stay norm-free: they carry the scene's
// absolute colors to the heads, which per-sample normalization would erase.
template <typename T>
typename SceneNetT<T>::Out SceneNetT<T>::forward(TapeT<T>& tape, const TensorT<T>& x) const {
  auto shallow = apply(tape, stem, x, Norm::none, Activation::relu);
  auto h = shallow;
  for (const auto& blk : enc) h = blk.forward(tape, h);
  h = res.forward(tape, h);
  std::vector<TensorT<T>> mids;
  for (const auto& blk : dec) {
    h = blk.forward(tape, h);
    mids.push_back(h);
  }
  auto decoder = mids.back();
  TensorT<T> fused;
  if (multiscale) {
    auto b1 = apply(tape, ms1, mids[0], Norm::none, Activation::relu);
    auto b2 = apply(tape, ms2, mids[1], Norm::none, Activation::relu);
    auto b3 = apply(tape, ms3, mids[2], Norm::none, Activation::relu);
    auto cat = ops::concat_channels(tape, {b1, b2, b3, decoder});
    fused = apply(tape, fuse, cat, Norm::none, Activation::relu);
  } else {
    fused = decoder;
  }
  auto skip = ops::concat_channels(tape, {fused, shallow});
  auto feature = apply(tape, reduce, skip, Norm::none, Activation::relu);
  auto image = apply(tape, head, feature, Norm::none, Activation::tanh);
  return {feature, image};
}

// ---------------------------------------------------------------------------
// Shadow estimation net

template <typename T>
ShadowNetT<T> ShadowNetT<T>::make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                                  const ArchConfig& cfg) {
  ShadowNetT<T> net;
  net.norm = cfg.norm;
  const int c0 = cfg.base_channels;
  const BlockOptions opt{cfg.norm, cfg.calibration};
  net.stem = make_conv(store, rng, prefix + ".stem", 3, c0, 7, 1, 3);
  int c = c0;
  for (int i = 0; i < cfg.stages; ++i) {
    net.enc.push_back(
        GatedDownBlock<T>::make(store, rng, prefix + ".enc" + std::to_string(i + 1), c, opt));
    c *= 2;
  }
  net.res = ResidualStack<T>::make(store, rng, prefix, c, cfg.res_blocks, cfg.norm);
  for (int i = 0; i < cfg.stages; ++i) {
    net.dec.push_back(
        GatedUpBlock<T>::make(store, rng, prefix + ".dec" + std::to_string(i + 1), c, opt));
    c /= 2;
  }
  net.head = make_conv(store, rng, prefix + ".head", c0, 3, 7, 1, 3);
  return net;
}

template <typename T>
typename ShadowNetT<T>::Out ShadowNetT<T>::forward(TapeT<T>& tape, const TensorT<T>& x) const {
  auto h = apply(tape, stem, x, Norm::none, Activation::relu);
  for (const auto& blk : enc) h = blk.forward(tape, h);
  h = res.forward(tape, h);
  for (const auto& blk : dec) h = blk.forward(tape, h);
  auto image = apply(tape, head, h, Norm::none, Activation::tanh);
  return {h, image};
}

// ---------------------------------------------------------------------------
// Re-render net

template <typename T>
RerenderNetT<T> RerenderNetT<T>::make(ParamStoreT<T>& store, Rng& rng, const std::string& prefix,
                                      const ArchConfig& cfg) {
  RerenderNetT<T> net;
  net.norm = cfg.norm;
  const int in_ch = 2 * cfg.base_channels;
  for (int k : cfg.rerender_kernels)
    net.branches.push_back(make_conv(store, rng, prefix + ".branch" + std::to_string(k), in_ch,
                                     cfg.rerender_branch_channels, k, 1, (k - 1) / 2));
  const int cat = int(cfg.rerender_kernels.size()) * cfg.rerender_branch_channels;
  net.recal = ChannelRecalibration<T>::make(store, rng, prefix + ".recal", cat,
                                            cfg.recal_reduction);
  net.head = make_conv(store, rng, prefix + ".head", cat, 3, 7, 1, 3);
  return net;
}

template <typename T>
TensorT<T> RerenderNetT<T>::forward(TapeT<T>& tape, const TensorT<T>& scene_feature,
                                    const TensorT<T>& shadow_feature) const {
  check(scene_feature.shape() == shadow_feature.shape(),
        "rerender: feature shapes differ: ", scene_feature.shape().str(), " vs ",
        shadow_feature.shape().str());
  auto input = ops::concat_channels(tape, {scene_feature, shadow_feature});
  std::vector<TensorT<T>> outs;
  outs.reserve(branches.size());
  for (const auto& b : branches) outs.push_back(apply(tape, b, input, Norm::none, Activation::relu));
  auto cat = ops::concat_channels(tape, outs);
  auto recalibrated = recal.forward(tape, cat);
  return apply(tape, head, recalibrated, Norm::none, Activation::tanh);
}

// ---------------------------------------------------------------------------
// Bundle

template <typename T>
ModelBundleT<T> ModelBundleT<T>::build(const ArchConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelBundleT<T> m;
  m.config = cfg;
  Rng rng(seed);
  m.scene = SceneNetT<T>::make(m.gen, rng, "scene", cfg);
  m.shadow = ShadowNetT<T>::make(m.gen, rng, "shadow", cfg);
  m.rerender = RerenderNetT<T>::make(m.gen, rng, "rerender", cfg);
  m.disc_scene = PatchDiscriminator<T>::make(m.disc, rng, "disc_scene");
  m.disc_shadow = PatchDiscriminator<T>::make(m.disc, rng, "disc_shadow");
  return m;
}

template <typename T>
void ModelBundleT<T>::check_input(const TensorT<T>& x) const {
  const Shape s = x.shape();
  check(s.c == 3 && s.h == config.resolution && s.w == config.resolution,
        "model: expected (n,3,", config.resolution, ",", config.resolution, ") input, got ",
        s.str());
}

template <typename T>
typename ModelBundleT<T>::Outputs ModelBundleT<T>::full_forward(TapeT<T>& tape,
                                                                const TensorT<T>& x) const {
  check_input(x);
  auto s = scene.forward(tape, x);
  auto sh = shadow.forward(tape, x);
  auto y = rerender.forward(tape, s.feature, sh.feature);
  return {y, s.image, sh.image};
}

// ---------------------------------------------------------------------------
// Closed-form parameter counts.
//
// Ladder (shared by both subnetworks, channel width c at stage input):
//   stem: conv(3 -> c0, 7)
//   enc_i: gated_down(c0 * 2^i), i = 0..3
//   res:   9 * 2 * conv(16c0 -> 16c0, 3)
//   dec_i: gated_up(16c0 / 2^i), i = 0..3
// Scene additionally: ms deconvs from 8c0/4c0/2c0, 1x1 fuse, reduce, head.

int64_t shadow_net_param_count(const ArchConfig& cfg) {
  const int c0 = cfg.base_channels;
  int64_t total = conv_param_count(3, c0, 7);
  int c = c0;
  for (int i = 0; i < cfg.stages; ++i) {
    total += gated_down_param_count(c, cfg.calibration);
    c *= 2;
  }
  total += residual_stack_param_count(c, cfg.res_blocks);
  for (int i = 0; i < cfg.stages; ++i) {
    total += gated_up_param_count(c, cfg.calibration);
    c /= 2;
  }
  total += conv_param_count(c0, 3, 7);
  return total;
}

int64_t scene_net_param_count(const ArchConfig& cfg) {
  const int c0 = cfg.base_channels;
  int64_t total = shadow_net_param_count(cfg);  // same ladder + image head
  int fused_channels = c0;
  if (cfg.multiscale) {
    total += conv_param_count(8 * c0, cfg.ms_branch_channels, 8);
    total += conv_param_count(4 * c0, cfg.ms_branch_channels, 4);
    total += conv_param_count(2 * c0, cfg.ms_branch_channels, 4);
    total += conv_param_count(3 * cfg.ms_branch_channels + c0, cfg.ms_fused_channels, 1);
    fused_channels = cfg.ms_fused_channels;
  }
  total += conv_param_count(fused_channels + c0, c0, 3);  // skip reduction
  return total;
}

int64_t rerender_net_param_count(const ArchConfig& cfg) {
  const int in_ch = 2 * cfg.base_channels;
  int64_t total = 0;
  for (int k : cfg.rerender_kernels)
    total += conv_param_count(in_ch, cfg.rerender_branch_channels, k);
  const int cat = int(cfg.rerender_kernels.size()) * cfg.rerender_branch_channels;
  total += recalibration_param_count(cat, cfg.recal_reduction);
  total += conv_param_count(cat, 3, 7);
  return total;
}

int64_t generator_param_count(const ArchConfig& cfg) {
  return scene_net_param_count(cfg) + shadow_net_param_count(cfg) +
         rerender_net_param_count(cfg);
}

template struct SceneNetT<float>;
template struct SceneNetT<double>;
template struct ShadowNetT<float>;
template struct ShadowNetT<double>;
template struct RerenderNetT<float>;
template struct RerenderNetT<double>;
template struct ModelBundleT<float>;
template struct ModelBundleT<double>;

}  // namespace relight
