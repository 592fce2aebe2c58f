#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "relight/common.hpp"
#include "relight/rng.hpp"

namespace relight {

// Dense rank-4 shape in (batch, channels, height, width) order.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  int64_t numel() const { return int64_t(n) * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return detail::concat("(", n, ",", c, ",", h, ",", w, ")");
  }

  void validate(const char* who) const {
    check(n >= 1 && c >= 1 && h >= 1 && w >= 1, who, ": all dims must be >= 1, got ", str());
  }
};

template <typename T>
struct TensorNodeT {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the node participates in a backward pass
  bool requires_grad = false;
  // True when some requires_grad leaf feeds this node; backward only
  // propagates along this path.
  bool grad_path = false;
  uint64_t id = 0;

  bool has_grad() const { return !grad.empty(); }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Value-semantic handle to a node in the computation graph. Copies share the
// underlying buffer; ops allocate fresh nodes.
template <typename T>
class TensorT {
 public:
  using Node = TensorNodeT<T>;

  TensorT() = default;

  static TensorT zeros(Shape s, bool requires_grad = false) {
    return make(s, std::vector<T>(s.numel(), T(0)), requires_grad);
  }

  static TensorT full(Shape s, T value) {
    return make(s, std::vector<T>(s.numel(), value), false);
  }

  static TensorT from_data(Shape s, std::vector<T> data, bool requires_grad = false) {
    check(int64_t(data.size()) == s.numel(), "tensor: data length ", data.size(),
          " does not match shape ", s.str());
    return make(s, std::move(data), requires_grad);
  }

  static TensorT randn(Shape s, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    std::vector<T> d(s.numel());
    for (auto& v : d) v = static_cast<T>(rng.normal() * stddev);
    return make(s, std::move(d), requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->shape.numel(); }
  uint64_t id() const { return node_->id; }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  T* ptr() { return node_->data.data(); }
  const T* ptr() const { return node_->data.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool on_grad_path() const { return node_->requires_grad || node_->grad_path; }
  void mark_grad_path(bool v) { node_->grad_path = v; }

  // Accumulated gradient, or zeros when the node never participated.
  std::vector<T> grad_or_zero() const {
    return node_->has_grad() ? node_->grad : std::vector<T>(node_->data.size(), T(0));
  }

  bool has_grad() const { return node_->has_grad(); }
  std::vector<T>& grad() {
    check(node_->has_grad(), "tensor: gradient not populated");
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    check(node_->has_grad(), "tensor: gradient not populated");
    return node_->grad;
  }
  std::vector<T>& ensure_grad() { return node_->ensure_grad(); }
  void clear_grad() { node_->grad.clear(); }

  T& at(int n, int c, int y, int x) { return node_->data[index(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return node_->data[index(n, c, y, x)]; }

  int64_t index(int n, int c, int y, int x) const {
    const Shape& s = node_->shape;
    return ((int64_t(n) * s.c + c) * s.h + y) * s.w + x;
  }

  // Leaf copy detached from any graph history.
  TensorT detach() const { return make(node_->shape, node_->data, false); }

  bool is_scalar() const { return numel() == 1; }
  T scalar() const {
    check(is_scalar(), "tensor: expected scalar, got shape ", shape().str());
    return node_->data[0];
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  static TensorT make(Shape s, std::vector<T> data, bool requires_grad) {
    s.validate("tensor");
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = s;
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    t.node_->id = next_id();
    return t;
  }

  static uint64_t next_id() {
    static uint64_t counter = 0;
    return ++counter;
  }

  std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

}  // namespace relight
