#pragma once

#include <optional>
#include <string>

#include "relight/tensor.hpp"

namespace relight {

// Image quality metrics over [0,1] images. All internal accumulation runs at
// double precision regardless of the tensor scalar type.

// 10*log10(1/mse); +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b);

// Windowed SSIM: 11x11 Gaussian (sigma 1.5), K1=0.01, K2=0.03, L=1, valid
// windows only, averaged over channels and positions. Images must be at
// least 11x11.
double ssim(const Tensor& a, const Tensor& b);

// Mean perceptual score: 0.5 * (ssim + (1 - lpips)); inputs must be in [0,1].
double mps(double ssim_value, double lpips_value);

struct MetricReport {
  double psnr = 0.0;  // +inf encodes the identical-image sentinel
  double ssim = 0.0;
  std::optional<double> lpips;
  std::optional<double> mps;

  // Line-oriented key=value form; psnr prints "identical" at the sentinel.
  std::string to_kv() const;
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

}  // namespace relight
