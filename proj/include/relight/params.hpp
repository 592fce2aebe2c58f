#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relight/tensor.hpp"

namespace relight {

// Named collection of learnable tensors. Iteration order is registration
// order, which makes initialization, checkpoints and updates deterministic.
template <typename T>
class ParamStoreT {
 public:
  TensorT<T>& add(const std::string& name, TensorT<T> t) {
    check(!index_.count(name), "params: duplicate name '", name, "'");
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  TensorT<T>& get(const std::string& name) {
    auto it = index_.find(name);
    check(it != index_.end(), "params: unknown name '", name, "'");
    return items_[it->second].second;
  }

  const TensorT<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "params: unknown name '", name, "'");
    return items_[it->second].second;
  }

  std::vector<std::pair<std::string, TensorT<T>>>& items() { return items_; }
  const std::vector<std::pair<std::string, TensorT<T>>>& items() const { return items_; }

  size_t size() const { return items_.size(); }

  int64_t parameter_count() const {
    int64_t total = 0;
    for (const auto& [name, t] : items_) total += t.numel();
    return total;
  }

  void zero_grads() {
    for (auto& [name, t] : items_) t.clear_grad();
  }

 private:
  std::vector<std::pair<std::string, TensorT<T>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

using ParamStore = ParamStoreT<float>;

}  // namespace relight
