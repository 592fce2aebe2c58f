#pragma once

// Shared test oracles. These stay deliberately naive and independent of the
// library's kernel loop structure: the quadruple-loop convolutions below are
// the definitional reference the optimized paths are checked against.

#include <cmath>
#include <string>
#include <vector>

#include "relight/ops.hpp"
#include "relight/rng.hpp"
#include "relight/tape.hpp"
#include "relight/tensor.hpp"

namespace testutil {

using relight::Rng;
using relight::Shape;
using relight::TapeT;
using relight::TensorT;

// y[n,co,oy,ox] = b[co] + sum_{ci,ky,kx} w[co,ci,ky,kx] * x[n,ci,oy*s+ky-p,ox*s+kx-p]
template <typename T>
std::vector<T> conv_oracle(const std::vector<T>& x, Shape xs, const std::vector<T>& w, int co,
                           int k, const std::vector<T>& b, int s, int p, Shape ys) {
  std::vector<T> y(ys.numel(), T(0));
  for (int n = 0; n < ys.n; ++n)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox) {
          T acc = b.empty() ? T(0) : b[oc];
          for (int ic = 0; ic < xs.c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s + ky - p;
                const int ix = ox * s + kx - p;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += w[((int64_t(oc) * xs.c + ic) * k + ky) * k + kx] *
                       x[((int64_t(n) * xs.c + ic) * xs.h + iy) * xs.w + ix];
              }
          y[((int64_t(n) * co + oc) * ys.h + oy) * ys.w + ox] = acc;
        }
  return y;
}

// Scatter definition of the transposed convolution: every input pixel adds a
// weighted kernel patch into the output. Weight layout (c_in, c_out, k, k).
template <typename T>
std::vector<T> deconv_oracle(const std::vector<T>& x, Shape xs, const std::vector<T>& w, int co,
                             int k, const std::vector<T>& b, int s, int p, Shape ys) {
  std::vector<T> y(ys.numel(), T(0));
  for (int n = 0; n < ys.n; ++n)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ys.h; ++oy)
        for (int ox = 0; ox < ys.w; ++ox)
          y[((int64_t(n) * co + oc) * ys.h + oy) * ys.w + ox] = b.empty() ? T(0) : b[oc];
  for (int n = 0; n < xs.n; ++n)
    for (int ic = 0; ic < xs.c; ++ic)
      for (int iy = 0; iy < xs.h; ++iy)
        for (int ix = 0; ix < xs.w; ++ix) {
          const T xv = x[((int64_t(n) * xs.c + ic) * xs.h + iy) * xs.w + ix];
          for (int oc = 0; oc < co; ++oc)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * s + ky - p;
                const int ox = ix * s + kx - p;
                if (oy < 0 || oy >= ys.h || ox < 0 || ox >= ys.w) continue;
                y[((int64_t(n) * co + oc) * ys.h + oy) * ys.w + ox] +=
                    w[((int64_t(ic) * co + oc) * k + ky) * k + kx] * xv;
              }
        }
  return y;
}

template <typename T>
T max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  T m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Uniform values in [-1, 1] nudged away from zero so relu-style kinks cannot
// sit inside the finite-difference stencil.
template <typename T>
TensorT<T> random_tensor(Shape s, Rng& rng, bool away_from_kinks = false) {
  std::vector<T> d(s.numel());
  for (auto& v : d) {
    double u = rng.uniform(-1.0, 1.0);
    if (away_from_kinks && std::abs(u) < 1e-2) u = u < 0 ? u - 1e-2 : u + 1e-2;
    v = T(u);
  }
  return TensorT<T>::from_data(s, std::move(d));
}

// Copy of t with every value pushed at least `margin` away from `point`.
template <typename T>
TensorT<T> shifted_away(const TensorT<T>& t, double point, double margin = 1e-2) {
  std::vector<T> d = t.data();
  for (auto& v : d)
    if (std::abs(double(v) - point) < margin) v = T(point + margin * (v < point ? -1 : 1));
  return TensorT<T>::from_data(t.shape(), std::move(d));
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  std::string worst;
};

// Central finite differences at 64-bit against the recorded backward pass.
// forward_loss must rebuild the graph from the current parameter values on
// every call and return a scalar.
template <typename F>
GradCheckResult check_gradients(F&& forward_loss,
                                const std::vector<std::pair<std::string, TensorT<double>>>& checked,
                                int coords_per_tensor, uint64_t seed, double eps = 1e-4) {
  GradCheckResult result;
  std::vector<std::vector<double>> analytic;
  // Freeze relu / clamp branch selection at the linearization point so the
  // +-eps stencil probes the branch the backward pass differentiates.
  relight::ops::BranchFreezeGuard freeze;
  {
    for (const auto& [name, t] : checked) const_cast<TensorT<double>&>(t).clear_grad();
    TapeT<double> tape;
    auto loss = forward_loss(tape);
    tape.backward(loss);
    for (const auto& [name, t] : checked) analytic.push_back(t.grad_or_zero());
    for (const auto& [name, t] : checked) const_cast<TensorT<double>&>(t).clear_grad();
  }
  freeze.begin_replay();
  Rng pick(seed);
  for (size_t ti = 0; ti < checked.size(); ++ti) {
    auto t = checked[ti].second;
    const int64_t n = t.numel();
    const int count = n <= coords_per_tensor ? int(n) : coords_per_tensor;
    for (int c = 0; c < count; ++c) {
      const int64_t idx =
          n <= coords_per_tensor ? c : int64_t(pick.next_u64() % uint64_t(n));
      const double saved = t.data()[idx];
      auto loss_at = [&](double value) {
        t.data()[idx] = value;
        freeze.next_pass();
        TapeT<double> tape;
        const double l = forward_loss(tape).scalar();
        return l;
      };
      // Richardson-extrapolated central differences: cancels the eps^2 f'''
      // truncation term, which instance-norm chains make large.
      const double d1 = (loss_at(saved + eps) - loss_at(saved - eps)) / (2.0 * eps);
      const double d2 =
          (loss_at(saved + eps / 2) - loss_at(saved - eps / 2)) / eps;
      t.data()[idx] = saved;
      const double fd = (4.0 * d2 - d1) / 3.0;
      const double an = analytic[ti][idx];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      ++result.coords_checked;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst = checked[ti].first + "[" + std::to_string(idx) + "] analytic " +
                       std::to_string(an) + " fd " + std::to_string(fd);
      }
    }
  }
  return result;
}

template <typename T>
double dot(const std::vector<T>& a, const std::vector<T>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

}  // namespace testutil
