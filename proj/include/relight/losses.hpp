#pragma once

#include "relight/ops.hpp"

namespace relight {

// Shadow sensitivity threshold: everything brighter than 15/255 is clamped
// before the shadow critic sees it.
inline constexpr double kShadowThreshold = 15.0 / 255.0;

struct LossWeights {
  float recon_scene = 1.0f;
  float recon_shadow = 1.0f;
  float recon_final = 1.0f;
  float adv_scene = 0.01f;
  float adv_shadow = 0.01f;
  float shadow_threshold = float(kShadowThreshold);

  void validate() const;
};

// Clamps a [0,1] image to [0, threshold] per channel.
template <typename T>
TensorT<T> shadow_rectify(TapeT<T>& tape, const TensorT<T>& image01, T threshold);

// Least-squares GAN objective over patch score maps:
//   d = 0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)
//   g = mean((fake - 1)^2)
template <typename T>
struct AdversarialLosses {
  TensorT<T> d_loss;
  TensorT<T> g_loss;
};

template <typename T>
AdversarialLosses<T> adversarial_losses(TapeT<T>& tape, const TensorT<T>& disc_real_scores,
                                        const TensorT<T>& disc_fake_scores);

// Map between the [-1,1] network range and the [0,1] image range.
template <typename T>
TensorT<T> to_unit_range(TapeT<T>& tape, const TensorT<T>& signed_image);

}  // namespace relight
