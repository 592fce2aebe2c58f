#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "relight/tensor.hpp"

namespace relight {

// Records operations in execution order. Records are topological by
// construction (an op's inputs always exist before its output), so the
// reverse sweep visits every node exactly once and sums gradient
// contributions from all consumers.
template <typename T>
class TapeT {
 public:
  void record(const TensorT<T>& output, std::function<void()> backward_fn) {
    records_.push_back({output.node(), std::move(backward_fn)});
  }

  // Seeds d(root)/d(root) = 1 and propagates to every participating node.
  // Nodes whose gradient buffer was never touched did not influence root.
  void backward(const TensorT<T>& root) {
    check(root.is_scalar(), "backward: root must be scalar, got shape ", root.shape().str());
    root.node()->ensure_grad()[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->out->has_grad()) it->fn();
    }
  }

  size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  struct Record {
    std::shared_ptr<TensorNodeT<T>> out;
    std::function<void()> fn;
  };
  std::vector<Record> records_;
};

using Tape = TapeT<float>;

}  // namespace relight
