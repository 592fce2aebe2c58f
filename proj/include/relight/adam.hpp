#pragma once

#include <cmath>
#include <unordered_map>

#include "relight/params.hpp"

namespace relight {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moments are allocated lazily per parameter and
// the step counter is shared across the store. step() consumes and clears
// the accumulated gradients.
template <typename T>
class AdamT {
 public:
  explicit AdamT(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  void step(ParamStoreT<T>& params) {
    ++t_;
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    const T corr1 = T(1) - std::pow(b1, T(t_));
    const T corr2 = T(1) - std::pow(b2, T(t_));
    const T lr = T(cfg_.lr), eps = T(cfg_.epsilon);
    for (auto& [name, p] : params.items()) {
      check(p.has_grad(), "adam_step: parameter '", name, "' has no gradient");
      auto& slot = slots_[name];
      if (slot.m.empty()) {
        slot.m.assign(p.numel(), T(0));
        slot.v.assign(p.numel(), T(0));
      }
      check(int64_t(slot.m.size()) == p.numel(), "adam_step: moment shape mismatch for '", name,
            "'");
      const auto& g = p.grad();
      T* m = slot.m.data();
      T* v = slot.v.data();
      T* w = p.ptr();
      const int64_t n = p.numel();
      for (int64_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mhat = m[i] / corr1;
        const T vhat = v[i] / corr2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      p.clear_grad();
    }
  }

  bool has_state(const std::string& name) const { return slots_.count(name) > 0; }

  const std::vector<T>& moment_m(const std::string& name) const { return slots_.at(name).m; }
  const std::vector<T>& moment_v(const std::string& name) const { return slots_.at(name).v; }

  void restore(const std::string& name, std::vector<T> m, std::vector<T> v) {
    slots_[name] = Slot{std::move(m), std::move(v)};
  }

 private:
  struct Slot {
    std::vector<T> m, v;
  };
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

using Adam = AdamT<float>;

}  // namespace relight
