#include "relight/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"

namespace relight {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

// Normalized 11x11 Gaussian window.
const double* gaussian_window() {
  static const auto table = [] {
    std::array<double, kWindow * kWindow> w{};
    const int r = kWindow / 2;
    double total = 0.0;
    for (int y = 0; y < kWindow; ++y)
      for (int x = 0; x < kWindow; ++x) {
        const double dy = y - r, dx = x - r;
        w[y * kWindow + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        total += w[y * kWindow + x];
      }
    for (auto& v : w) v /= total;
    return w;
  }();
  return table.data();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "psnr: shape mismatch ", a.shape().str(), " vs ",
        b.shape().str());
  double acc = 0.0;
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double d = double(a.ptr()[i]) - double(b.ptr()[i]);
    acc += d * d;
  }
  const double mse = acc / double(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "ssim: shape mismatch ", a.shape().str(), " vs ",
        b.shape().str());
  const Shape s = a.shape();
  check(s.h >= kWindow && s.w >= kWindow, "ssim: images must be at least ", kWindow, "x",
        kWindow, ", got ", s.str());
  const double c1 = kK1 * kK1;  // L = 1
  const double c2 = kK2 * kK2;
  const double* win = gaussian_window();
  double total = 0.0;
  int64_t count = 0;
  const int64_t hw = int64_t(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const float* pa = a.ptr() + (int64_t(n) * s.c + c) * hw;
      const float* pb = b.ptr() + (int64_t(n) * s.c + c) * hw;
      for (int y = 0; y + kWindow <= s.h; ++y) {
        for (int x = 0; x + kWindow <= s.w; ++x) {
          double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
          for (int wy = 0; wy < kWindow; ++wy)
            for (int wx = 0; wx < kWindow; ++wx) {
              const double wv = win[wy * kWindow + wx];
              const double va = pa[(y + wy) * s.w + (x + wx)];
              const double vb = pb[(y + wy) * s.w + (x + wx)];
              mu_a += wv * va;
              mu_b += wv * vb;
              aa += wv * va * va;
              bb += wv * vb * vb;
              ab += wv * va * vb;
            }
          const double var_a = aa - mu_a * mu_a;
          const double var_b = bb - mu_b * mu_b;
          const double cov = ab - mu_a * mu_b;
          const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
          const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
          total += num / den;
          ++count;
        }
      }
    }
  }
  return total / double(count);
}

double mps(double ssim_value, double lpips_value) {
  check(ssim_value >= 0.0 && ssim_value <= 1.0, "mps: ssim outside [0,1]: ", ssim_value);
  check(lpips_value >= 0.0 && lpips_value <= 1.0, "mps: lpips outside [0,1]: ", lpips_value);
  return 0.5 * (ssim_value + (1.0 - lpips_value));
}

std::string MetricReport::to_kv() const {
  std::string out;
  out += "psnr=";
  out += std::isinf(psnr) ? "identical" : format_double(psnr);
  out += "\nssim=" + format_double(ssim) + "\n";
  if (lpips) out += "lpips=" + format_double(*lpips) + "\n";
  if (mps) out += "mps=" + format_double(*mps) + "\n";
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  if (std::isinf(psnr))
    j["psnr"] = "identical";
  else
    j["psnr"] = psnr;
  j["ssim"] = ssim;
  if (lpips) j["lpips"] = *lpips;
  if (mps) j["mps"] = *mps;
  return j.dump();
}

MetricReport MetricReport::from_json(const std::string& text) {
  MetricReport r;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail("metric report: invalid JSON: ", e.what());
  }
  check(j.contains("psnr") && j.contains("ssim"), "metric report: missing psnr/ssim fields");
  if (j["psnr"].is_string()) {
    check(j["psnr"] == "identical", "metric report: unexpected psnr value");
    r.psnr = std::numeric_limits<double>::infinity();
  } else {
    r.psnr = j["psnr"].get<double>();
  }
  r.ssim = j["ssim"].get<double>();
  if (j.contains("lpips")) r.lpips = j["lpips"].get<double>();
  if (j.contains("mps")) r.mps = j["mps"].get<double>();
  return r;
}

}  // namespace relight
