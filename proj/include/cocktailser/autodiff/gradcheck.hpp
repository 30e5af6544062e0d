// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cocktailser/autodiff/tensor.hpp"

namespace cocktailser::ad {

struct GradCheckGroup {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Gradients smaller than this are compared on an absolute scale.
  double scale_floor = 1e-3;
  // Checks at most this many elements per group (evenly strided); 0 = all.
  std::size_t max_elements_per_group = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `fn` must rebuild the graph from the current leaf values on
/// every call; `leaves` are the named tensors (inputs and parameters) to check.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& fn,
                                  std::vector<Parameter<double>> leaves,
                                  GradCheckOptions opt = {}) {
  for (auto& l : leaves) l.tensor.zero_grad();
  Tensor<double> out = fn();
  CSER_CHECK(out.size() == 1, "grad_check: function must return a scalar");
  CSER_CHECK(std::isfinite(out.item()), "grad_check: non-finite function value");
  out.backward();

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (auto& l : leaves) {
    auto data = l.tensor.mutable_data();
    std::vector<double> analytic(data.size(), 0.0);
    if (l.tensor.has_grad()) {
      auto g = l.tensor.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    for (double g : analytic) CSER_CHECK(std::isfinite(g), "grad_check: non-finite gradient in ", l.name);

    GradCheckGroup group{l.name, 0, 0.0};
    std::size_t stride = 1;
    if (opt.max_elements_per_group && data.size() > opt.max_elements_per_group)
      stride = data.size() / opt.max_elements_per_group;
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double orig = data[i];
      data[i] = orig + opt.step;
      const double fp = fn().item();
      data[i] = orig - opt.step;
      const double fm = fn().item();
      data[i] = orig;
      CSER_CHECK(std::isfinite(fp) && std::isfinite(fm), "grad_check: non-finite value while perturbing ",
                 l.name);
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.scale_floor});
      group.max_rel_error = std::max(group.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++group.elements;
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(group);
  }
  for (auto& l : leaves) l.tensor.zero_grad();
  return report;
}

}  // namespace cocktailser::ad
