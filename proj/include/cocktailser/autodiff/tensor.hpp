// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cocktailser/error.hpp"

namespace cocktailser::ad {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

/// Handle to a node of a dynamically built computation graph. Copies share
/// the node; ops never mutate their inputs.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    for (int d : shape) CSER_CHECK(d >= 1, "tensor dims must be >= 1, got ", shape_str(shape));
    node->value.assign(numel(shape), T(0));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    CSER_CHECK(values.size() == numel(shape), "tensor data length ", values.size(),
               " does not match shape ", shape_str(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return node_->value; }
  // Only parameters and leaves should be written through this.
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->grad_data(), node_->value.size()}; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    CSER_CHECK(size() == 1, "item() on tensor of shape ", shape_str(shape()));
    return node_->value[0];
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  /// Detached copy: same values, no graph history, no gradient.
  Tensor detach() const { return from(shape(), node_->value, false); }

  /// Reverse-mode sweep seeded with d(self)/d(self) = 1. Only valid on scalars.
  void backward(T seed = T(1)) const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an op result. When no parent needs gradients the history is
/// dropped so inference graphs hold no references.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  node->requires_grad = needs;
  if (needs) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void Tensor<T>::backward(T seed) const {
  CSER_CHECK(size() == 1, "backward() requires a scalar, got ", shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_data()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

/// A named, trainable leaf tensor.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered collection of uniquely named parameters owned by a model.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> add(const std::string& name, Shape shape) {
    for (const auto& p : params_)
      CSER_CHECK(p.name != name, "duplicate parameter name: ", name);
    auto t = Tensor<T>::zeros(std::move(shape), true);
    params_.push_back({name, t});
    return t;
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }

  Tensor<T> get(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    detail::fail("no parameter named ", name);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Copies values (not gradients) from another set with identical layout.
  void copy_values_from(const ParameterSet& other) {
    CSER_CHECK(other.params_.size() == params_.size(), "parameter count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = other.params_[i];
      auto& dst = params_[i];
      CSER_CHECK(src.name == dst.name && src.tensor.shape() == dst.tensor.shape(),
                 "parameter layout mismatch at ", dst.name);
      std::copy(src.tensor.data().begin(), src.tensor.data().end(),
                dst.tensor.mutable_data().begin());
    }
  }

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace cocktailser::ad
