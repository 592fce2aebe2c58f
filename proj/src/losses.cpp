#include "relight/losses.hpp"

namespace relight {

void LossWeights::validate() const {
  check(recon_scene >= 0 && recon_shadow >= 0 && recon_final >= 0 && adv_scene >= 0 &&
            adv_shadow >= 0,
        "loss weights must be non-negative");
  check(shadow_threshold >= 0.0f && shadow_threshold <= 1.0f,
        "shadow threshold must lie in [0,1], got ", shadow_threshold);
}

template <typename T>
TensorT<T> shadow_rectify(TapeT<T>& tape, const TensorT<T>& image01, T threshold) {
  check(threshold >= T(0) && threshold <= T(1), "shadow_rectify: threshold outside [0,1]: ",
        threshold);
  return ops::min_const(tape, image01, threshold);
}

template <typename T>
AdversarialLosses<T> adversarial_losses(TapeT<T>& tape, const TensorT<T>& real,
                                        const TensorT<T>& fake) {
  check(real.shape() == fake.shape(), "adversarial_losses: score map shapes differ: ",
        real.shape().str(), " vs ", fake.shape().str());
  auto ones_r = TensorT<T>::full(real.shape(), T(1));
  auto zeros_f = TensorT<T>::full(fake.shape(), T(0));
  auto ones_f = TensorT<T>::full(fake.shape(), T(1));
  auto d_real = ops::scale(tape, ops::mse_loss(tape, real, ones_r), T(0.5));
  auto d_fake = ops::scale(tape, ops::mse_loss(tape, fake, zeros_f), T(0.5));
  AdversarialLosses<T> out;
  out.d_loss = ops::add(tape, d_real, d_fake);
  out.g_loss = ops::mse_loss(tape, fake, ones_f);
  return out;
}

template <typename T>
TensorT<T> to_unit_range(TapeT<T>& tape, const TensorT<T>& signed_image) {
  auto half = ops::scale(tape, signed_image, T(0.5));
  auto offset = TensorT<T>::full(signed_image.shape(), T(0.5));
  return ops::add(tape, half, offset);
}

template TensorT<float> shadow_rectify<float>(TapeT<float>&, const TensorT<float>&, float);
template TensorT<double> shadow_rectify<double>(TapeT<double>&, const TensorT<double>&, double);
template AdversarialLosses<float> adversarial_losses<float>(TapeT<float>&, const TensorT<float>&,
                                                            const TensorT<float>&);
template AdversarialLosses<double> adversarial_losses<double>(TapeT<double>&,
                                                              const TensorT<double>&,
                                                              const TensorT<double>&);
template TensorT<float> to_unit_range<float>(TapeT<float>&, const TensorT<float>&);
template TensorT<double> to_unit_range<double>(TapeT<double>&, const TensorT<double>&);

}  // namespace relight
