#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "relight/kernels.hpp"
#include "relight/tape.hpp"
#include "relight/tensor.hpp"

namespace relight {

enum class Elementwise { add, mul };
enum class Activation { sigmoid, tanh, relu, leaky_relu };

// Negative-side slope of leaky_relu.
inline constexpr double kLeakySlope = 0.2;

// Reverse-mode ops. Each takes the tape first, validates shapes with a
// diagnostic naming the offending dimension, and records its backward rule.
// conv weight layout (c_out, c_in, k, k); deconv weight layout
// (c_in, c_out, k, k).
namespace ops {

// Support for finite-difference harnesses over piecewise-linear nets: a
// +-eps stencil can flip relu / clamp branches mid-measurement, which
// contaminates the difference quotient with branch-switch jumps rather than
// derivative error. Recording the branch masks once at the linearization
// point and replaying them during the stencil evaluations makes the probed
// function the smooth branch the backward pass actually differentiates.
// Branch *selection* is covered separately by the mask-oracle tests.
// Test-only, single-threaded.
class BranchFreeze {
 public:
  enum class Mode { off, record, replay };

  static BranchFreeze& instance() {
    static BranchFreeze bf;
    return bf;
  }

  void start_recording() {
    mode_ = Mode::record;
    masks_.clear();
    cursor_ = 0;
  }
  void start_replay() {
    mode_ = Mode::replay;
    cursor_ = 0;
  }
  void next_pass() { cursor_ = 0; }
  void stop() {
    mode_ = Mode::off;
    masks_.clear();
    cursor_ = 0;
  }

  Mode mode() const { return mode_; }

  std::shared_ptr<std::vector<uint8_t>> track(std::shared_ptr<std::vector<uint8_t>> mask) {
    if (mode_ == Mode::record) {
      masks_.push_back(mask);
      return mask;
    }
    if (mode_ == Mode::replay) {
      check(cursor_ < masks_.size(), "branch freeze: replay ran past the recorded op sequence");
      return masks_[cursor_++];
    }
    return mask;
  }

 private:
  Mode mode_ = Mode::off;
  std::vector<std::shared_ptr<std::vector<uint8_t>>> masks_;
  size_t cursor_ = 0;
};

// RAII guard: records on construction, replays per pass, always unfreezes.
class BranchFreezeGuard {
 public:
  BranchFreezeGuard() { BranchFreeze::instance().start_recording(); }
  ~BranchFreezeGuard() { BranchFreeze::instance().stop(); }
  void begin_replay() { BranchFreeze::instance().start_replay(); }
  void next_pass() { BranchFreeze::instance().next_pass(); }
};


namespace {

// Output inherits the grad path from its inputs; backward only writes into
// inputs that sit on it.
template <typename T, typename... Ts>
void link(TensorT<T>& out, const Ts&... ins) {
  out.mark_grad_path((ins.on_grad_path() || ...));
}

}  // namespace

inline Shape conv2d_output_shape(Shape x, Shape w, int stride, int padding) {
  x.validate("conv2d input");
  w.validate("conv2d weight");
  check(stride >= 1, "conv2d: stride must be positive, got ", stride);
  check(padding >= 0, "conv2d: padding must be non-negative, got ", padding);
  check(w.h == w.w, "conv2d: kernel must be square, got ", w.h, "x", w.w);
  check(x.c == w.c, "conv2d: input channels (", x.c, ") do not match weight c_in (", w.c, ")");
  const int k = w.h;
  const int hy = (x.h + 2 * padding - k) / stride + 1;
  const int wy = (x.w + 2 * padding - k) / stride + 1;
  check(x.h + 2 * padding >= k && x.w + 2 * padding >= k && hy >= 1 && wy >= 1,
        "conv2d: output dims would be non-positive for input ", x.str(), ", kernel ", k,
        ", stride ", stride, ", padding ", padding);
  return Shape{x.n, w.n, hy, wy};
}

inline Shape deconv2d_output_shape(Shape x, Shape w, int stride, int padding) {
  x.validate("deconv2d input");
  w.validate("deconv2d weight");
  check(stride >= 1, "deconv2d: stride must be positive, got ", stride);
  check(padding >= 0, "deconv2d: padding must be non-negative, got ", padding);
  check(w.h == w.w, "deconv2d: kernel must be square, got ", w.h, "x", w.w);
  check(x.c == w.n, "deconv2d: input channels (", x.c, ") do not match weight c_in (", w.n, ")");
  const int k = w.h;
  const int hy = (x.h - 1) * stride - 2 * padding + k;
  const int wy = (x.w - 1) * stride - 2 * padding + k;
  check(hy >= 1 && wy >= 1, "deconv2d: output dims would be non-positive for input ", x.str(),
        ", kernel ", k, ", stride ", stride, ", padding ", padding);
  return Shape{x.n, w.c, hy, wy};
}

template <typename T>
TensorT<T> conv2d(TapeT<T>& tape, const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, int padding) {
  const Shape ys = conv2d_output_shape(x.shape(), w.shape(), stride, padding);
  const int co = w.shape().n, k = w.shape().h;
  check(b.shape() == Shape{1, co, 1, 1}, "conv2d: bias shape ", b.shape().str(),
        " does not match c_out ", co);
  auto y = TensorT<T>::zeros(ys);
  kernels::conv2d_forward(x.ptr(), x.shape(), w.ptr(), b.ptr(), co, k, stride, padding, y.ptr(),
                          ys);
  link(y, x, w, b);
  tape.record(y, [x = x, w = w, b = b, y, stride, padding, co, k]() mutable {
    kernels::conv2d_backward(x.ptr(), x.shape(), w.ptr(), co, k, stride, padding,
                             y.grad().data(), y.shape(),
                             x.on_grad_path() ? x.ensure_grad().data() : nullptr,
                             w.on_grad_path() ? w.ensure_grad().data() : nullptr,
                             b.on_grad_path() ? b.ensure_grad().data() : nullptr);
  });
  return y;
}

template <typename T>
TensorT<T> deconv2d(TapeT<T>& tape, const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                    int stride, int padding) {
  const Shape ys = deconv2d_output_shape(x.shape(), w.shape(), stride, padding);
  const int co = w.shape().c, k = w.shape().h;
  check(b.shape() == Shape{1, co, 1, 1}, "deconv2d: bias shape ", b.shape().str(),
        " does not match c_out ", co);
  auto y = TensorT<T>::zeros(ys);
  kernels::deconv2d_forward(x.ptr(), x.shape(), w.ptr(), b.ptr(), co, k, stride, padding, y.ptr(),
                            ys);
  link(y, x, w, b);
  tape.record(y, [x = x, w = w, b = b, y, stride, padding, co, k]() mutable {
    kernels::deconv2d_backward(x.ptr(), x.shape(), w.ptr(), co, k, stride, padding,
                               y.grad().data(), y.shape(),
                               x.on_grad_path() ? x.ensure_grad().data() : nullptr,
                               w.on_grad_path() ? w.ensure_grad().data() : nullptr,
                               b.on_grad_path() ? b.ensure_grad().data() : nullptr);
  });
  return y;
}

template <typename T>
TensorT<T> elementwise(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b, Elementwise kind) {
  check(a.shape() == b.shape(), "elementwise: shape mismatch ", a.shape().str(), " vs ",
        b.shape().str());
  auto y = TensorT<T>::zeros(a.shape());
  const int64_t n = a.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();
  if (kind == Elementwise::add) {
    for (int64_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
  } else {
    for (int64_t i = 0; i < n; ++i) py[i] = pa[i] * pb[i];
  }
  link(y, a, b);
  tape.record(y, [a = a, b = b, y, kind, n]() mutable {
    const auto& dy = y.grad();
    if (kind == Elementwise::add) {
      if (a.on_grad_path()) {
        auto& da = a.ensure_grad();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b.on_grad_path()) {
        auto& db = b.ensure_grad();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    } else {
      if (a.on_grad_path()) {
        auto& da = a.ensure_grad();
        const T* pb2 = b.ptr();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * pb2[i];
      }
      if (b.on_grad_path()) {
        auto& db = b.ensure_grad();
        const T* pa2 = a.ptr();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i] * pa2[i];
      }
    }
  });
  return y;
}

template <typename T>
TensorT<T> add(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  return elementwise(tape, a, b, Elementwise::add);
}

template <typename T>
TensorT<T> mul(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  return elementwise(tape, a, b, Elementwise::mul);
}

template <typename T>
TensorT<T> activation(TapeT<T>& tape, const TensorT<T>& x, Activation kind) {
  auto y = TensorT<T>::zeros(x.shape());
  const int64_t n = x.numel();
  const T* px = x.ptr();
  T* py = y.ptr();
  const T slope = T(kLeakySlope);
  std::shared_ptr<std::vector<uint8_t>> mask;
  if (kind == Activation::relu || kind == Activation::leaky_relu) {
    auto& bf = BranchFreeze::instance();
    if (bf.mode() == BranchFreeze::Mode::replay) {
      mask = bf.track(nullptr);
      check(int64_t(mask->size()) == n, "branch freeze: replay mask size mismatch");
    } else {
      mask = std::make_shared<std::vector<uint8_t>>(n);
      for (int64_t i = 0; i < n; ++i) (*mask)[i] = px[i] > T(0) ? 1 : 0;
      if (bf.mode() == BranchFreeze::Mode::record) bf.track(mask);
    }
  }
  switch (kind) {
    case Activation::sigmoid:
      for (int64_t i = 0; i < n; ++i) py[i] = T(1) / (T(1) + std::exp(-px[i]));
      break;
    case Activation::tanh:
      for (int64_t i = 0; i < n; ++i) py[i] = std::tanh(px[i]);
      break;
    case Activation::relu:
      for (int64_t i = 0; i < n; ++i) py[i] = (*mask)[i] ? px[i] : T(0);
      break;
    case Activation::leaky_relu:
      for (int64_t i = 0; i < n; ++i) py[i] = (*mask)[i] ? px[i] : slope * px[i];
      break;
  }
  link(y, x);
  tape.record(y, [x = x, y, kind, n, slope, mask]() mutable {
    if (!x.on_grad_path()) return;
    const auto& dy = y.grad();
    auto& dx = x.ensure_grad();
    const T* py2 = y.ptr();
    switch (kind) {
      case Activation::sigmoid:
        for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * py2[i] * (T(1) - py2[i]);
        break;
      case Activation::tanh:
        for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * (T(1) - py2[i] * py2[i]);
        break;
      case Activation::relu:
        for (int64_t i = 0; i < n; ++i) dx[i] += (*mask)[i] ? dy[i] : T(0);
        break;
      case Activation::leaky_relu:
        for (int64_t i = 0; i < n; ++i) dx[i] += (*mask)[i] ? dy[i] : slope * dy[i];
        break;
    }
  });
  return y;
}

template <typename T>
TensorT<T> concat_channels(TapeT<T>& tape, const std::vector<TensorT<T>>& inputs) {
  check(!inputs.empty(), "concat_channels: needs at least one input");
  const Shape s0 = inputs[0].shape();
  int total_c = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Shape si = inputs[i].shape();
    check(si.n == s0.n && si.h == s0.h && si.w == s0.w, "concat_channels: input ", i,
          " has shape ", si.str(), " incompatible with ", s0.str());
    total_c += si.c;
  }
  const Shape ys{s0.n, total_c, s0.h, s0.w};
  auto y = TensorT<T>::zeros(ys);
  const int64_t hw = int64_t(s0.h) * s0.w;
  for (int n = 0; n < s0.n; ++n) {
    int coff = 0;
    for (const auto& in : inputs) {
      const int ci = in.shape().c;
      const T* src = in.ptr() + int64_t(n) * ci * hw;
      T* dst = y.ptr() + (int64_t(n) * total_c + coff) * hw;
      std::copy(src, src + int64_t(ci) * hw, dst);
      coff += ci;
    }
  }
  bool any = false;
  for (const auto& in : inputs) any = any || in.on_grad_path();
  y.mark_grad_path(any);
  tape.record(y, [inputs = inputs, y, total_c, hw]() mutable {
    const auto& dy = y.grad();
    const int n_batch = y.shape().n;
    for (int n = 0; n < n_batch; ++n) {
      int coff = 0;
      for (auto& in : inputs) {
        const int ci = in.shape().c;
        if (in.on_grad_path()) {
          auto& din = in.ensure_grad();
          const T* src = dy.data() + (int64_t(n) * total_c + coff) * hw;
          T* dst = din.data() + int64_t(n) * ci * hw;
          for (int64_t i = 0; i < int64_t(ci) * hw; ++i) dst[i] += src[i];
        }
        coff += ci;
      }
    }
  });
  return y;
}

template <typename T>
TensorT<T> global_avg_pool(TapeT<T>& tape, const TensorT<T>& x) {
  const Shape xs = x.shape();
  auto y = TensorT<T>::zeros(Shape{xs.n, xs.c, 1, 1});
  const int64_t hw = int64_t(xs.h) * xs.w;
  for (int64_t p = 0; p < int64_t(xs.n) * xs.c; ++p) {
    const T* src = x.ptr() + p * hw;
    T acc = 0;
    for (int64_t i = 0; i < hw; ++i) acc += src[i];
    y.ptr()[p] = acc / T(hw);
  }
  link(y, x);
  tape.record(y, [x = x, y, hw]() mutable {
    if (!x.on_grad_path()) return;
    const auto& dy = y.grad();
    auto& dx = x.ensure_grad();
    const int64_t planes = int64_t(x.shape().n) * x.shape().c;
    for (int64_t p = 0; p < planes; ++p) {
      const T g = dy[p] / T(hw);
      T* dst = dx.data() + p * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] += g;
    }
  });
  return y;
}

template <typename T>
TensorT<T> min_const(TapeT<T>& tape, const TensorT<T>& x, T threshold) {
  check(threshold >= T(0), "min_const: threshold must be >= 0, got ", threshold);
  auto y = TensorT<T>::zeros(x.shape());
  const int64_t n = x.numel();
  const T* px = x.ptr();
  T* py = y.ptr();
  // pass-through at equality: gradient flows where the value is not clipped
  std::shared_ptr<std::vector<uint8_t>> mask;
  auto& bf = BranchFreeze::instance();
  if (bf.mode() == BranchFreeze::Mode::replay) {
    mask = bf.track(nullptr);
    check(int64_t(mask->size()) == n, "branch freeze: replay mask size mismatch");
  } else {
    mask = std::make_shared<std::vector<uint8_t>>(n);
    for (int64_t i = 0; i < n; ++i) (*mask)[i] = px[i] <= threshold ? 1 : 0;
    if (bf.mode() == BranchFreeze::Mode::record) bf.track(mask);
  }
  for (int64_t i = 0; i < n; ++i) py[i] = (*mask)[i] ? px[i] : threshold;
  link(y, x);
  tape.record(y, [x = x, y, mask, n]() mutable {
    if (!x.on_grad_path()) return;
    const auto& dy = y.grad();
    auto& dx = x.ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      if ((*mask)[i]) dx[i] += dy[i];
  });
  return y;
}

template <typename T>
TensorT<T> scale_channels(TapeT<T>& tape, const TensorT<T>& x, const TensorT<T>& gate) {
  const Shape xs = x.shape();
  check(gate.shape() == Shape{xs.n, xs.c, 1, 1}, "scale_channels: gate shape ",
        gate.shape().str(), " must be (", xs.n, ",", xs.c, ",1,1)");
  auto y = TensorT<T>::zeros(xs);
  const int64_t hw = int64_t(xs.h) * xs.w;
  const int64_t planes = int64_t(xs.n) * xs.c;
  for (int64_t p = 0; p < planes; ++p) {
    const T g = gate.ptr()[p];
    const T* src = x.ptr() + p * hw;
    T* dst = y.ptr() + p * hw;
    for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * g;
  }
  link(y, x, gate);
  tape.record(y, [x = x, gate = gate, y, hw, planes]() mutable {
    const auto& dy = y.grad();
    if (x.on_grad_path()) {
      auto& dx = x.ensure_grad();
      for (int64_t p = 0; p < planes; ++p) {
        const T g = gate.ptr()[p];
        const T* src = dy.data() + p * hw;
        T* dst = dx.data() + p * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] += src[i] * g;
      }
    }
    if (gate.on_grad_path()) {
      auto& dg = gate.ensure_grad();
      for (int64_t p = 0; p < planes; ++p) {
        const T* px2 = x.ptr() + p * hw;
        const T* src = dy.data() + p * hw;
        T acc = 0;
        for (int64_t i = 0; i < hw; ++i) acc += px2[i] * src[i];
        dg[p] += acc;
      }
    }
  });
  return y;
}

template <typename T>
TensorT<T> instance_norm(TapeT<T>& tape, const TensorT<T>& x, T eps = T(1e-5)) {
  const Shape xs = x.shape();
  auto y = TensorT<T>::zeros(xs);
  auto inv_std = std::make_shared<std::vector<T>>(int64_t(xs.n) * xs.c);
  kernels::instance_norm_forward(x.ptr(), xs, eps, y.ptr(), inv_std->data());
  link(y, x);
  tape.record(y, [x = x, y, inv_std]() mutable {
    if (!x.on_grad_path()) return;
    kernels::instance_norm_backward(y.ptr(), x.shape(), inv_std->data(), y.grad().data(),
                                    x.ensure_grad().data());
  });
  return y;
}

template <typename T>
TensorT<T> scale(TapeT<T>& tape, const TensorT<T>& x, T factor) {
  auto y = TensorT<T>::zeros(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) y.ptr()[i] = x.ptr()[i] * factor;
  link(y, x);
  tape.record(y, [x = x, y, factor, n]() mutable {
    if (!x.on_grad_path()) return;
    const auto& dy = y.grad();
    auto& dx = x.ensure_grad();
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * factor;
  });
  return y;
}

template <typename T>
TensorT<T> sum_reduce(TapeT<T>& tape, const TensorT<T>& x) {
  auto y = TensorT<T>::zeros(Shape{1, 1, 1, 1});
  T acc = 0;
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += x.ptr()[i];
  y.ptr()[0] = acc;
  link(y, x);
  tape.record(y, [x = x, y, n]() mutable {
    if (!x.on_grad_path()) return;
    const T g = y.grad()[0];
    auto& dx = x.ensure_grad();
    for (int64_t i = 0; i < n; ++i) dx[i] += g;
  });
  return y;
}

template <typename T>
TensorT<T> mean_reduce(TapeT<T>& tape, const TensorT<T>& x) {
  auto y = sum_reduce(tape, x);
  return scale(tape, y, T(1) / T(x.numel()));
}

template <typename T>
TensorT<T> l1_loss(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  check(a.shape() == b.shape(), "l1_loss: shape mismatch ", a.shape().str(), " vs ",
        b.shape().str());
  auto y = TensorT<T>::zeros(Shape{1, 1, 1, 1});
  const int64_t n = a.numel();
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(a.ptr()[i] - b.ptr()[i]);
  y.ptr()[0] = acc / T(n);
  link(y, a, b);
  tape.record(y, [a = a, b = b, y, n]() mutable {
    const T g = y.grad()[0] / T(n);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    if (a.on_grad_path()) {
      auto& da = a.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T d = pa[i] - pb[i];
        da[i] += d > T(0) ? g : (d < T(0) ? -g : T(0));
      }
    }
    if (b.on_grad_path()) {
      auto& db = b.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T d = pa[i] - pb[i];
        db[i] -= d > T(0) ? g : (d < T(0) ? -g : T(0));
      }
    }
  });
  return y;
}

template <typename T>
TensorT<T> mse_loss(TapeT<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
  check(a.shape() == b.shape(), "mse_loss: shape mismatch ", a.shape().str(), " vs ",
        b.shape().str());
  auto y = TensorT<T>::zeros(Shape{1, 1, 1, 1});
  const int64_t n = a.numel();
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T d = a.ptr()[i] - b.ptr()[i];
    acc += d * d;
  }
  y.ptr()[0] = acc / T(n);
  link(y, a, b);
  tape.record(y, [a = a, b = b, y, n]() mutable {
    const T g = T(2) * y.grad()[0] / T(n);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    if (a.on_grad_path()) {
      auto& da = a.ensure_grad();
      for (int64_t i = 0; i < n; ++i) da[i] += g * (pa[i] - pb[i]);
    }
    if (b.on_grad_path()) {
      auto& db = b.ensure_grad();
      for (int64_t i = 0; i < n; ++i) db[i] -= g * (pa[i] - pb[i]);
    }
  });
  return y;
}
}  // namespace ops
}  // namespace relight
