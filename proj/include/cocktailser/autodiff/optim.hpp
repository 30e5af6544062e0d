// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <vector>

#include "cocktailser/autodiff/tensor.hpp"

namespace cocktailser::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Parameters may be added in
/// groups with their own learning rates. A parameter without a gradient is
/// treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

  void add(std::vector<Parameter<T>>& params, double lr) {
    CSER_CHECK(lr > 0.0, "adam: learning rate must be positive");
    for (auto& p : params) {
      slots_.push_back({p.tensor, std::vector<double>(p.tensor.size(), 0.0),
                        std::vector<double>(p.tensor.size(), 0.0), lr, p.name});
    }
  }
  void add(std::vector<Parameter<T>>& params) { add(params, opt_.lr); }

  long long steps() const { return step_; }

  /// One update from the gradients currently stored on the parameters.
  /// Throws before touching anything if a gradient is not finite.
  void step() {
    for (auto& s : slots_) {
      for (T g : s.tensor.grad())
        CSER_CHECK(std::isfinite(static_cast<double>(g)),
                   "adam: non-finite gradient in parameter ", s.name);
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (auto& s : slots_) {
      const bool has = s.tensor.has_grad();
      auto g = s.tensor.grad();
      auto w = s.tensor.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = has ? static_cast<double>(g[i]) : 0.0;
        s.m[i] = opt_.beta1 * s.m[i] + (1.0 - opt_.beta1) * gi;
        s.v[i] = opt_.beta2 * s.v[i] + (1.0 - opt_.beta2) * gi * gi;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - s.lr * mhat / (std::sqrt(vhat) + opt_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.tensor.zero_grad();
  }

 private:
  struct Slot {
    Tensor<T> tensor;
    std::vector<double> m, v;
    double lr;
    std::string name;
  };
  AdamOptions opt_;
  std::vector<Slot> slots_;
  long long step_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      if (p.tensor.has_grad())
        for (T& g : p.tensor.mutable_grad()) g *= f;
  }
  return norm;
}

}  // namespace cocktailser::ad
