// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Finite-difference checks of every differentiable op and of both models
// end to end, in double precision at small shapes.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cocktailser/autodiff/gradcheck.hpp"
#include "cocktailser/ser.hpp"
#include "cocktailser/tse.hpp"

namespace cocktailser {

struct GradSuiteEntry {
  std::string name;
  int trials = 0;
  double max_rel_error = 0.0;
};

namespace detail {

using TD = ad::Tensor<double>;

inline TD random_leaf(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD::from(std::move(shape), std::move(v), true);
}

inline TD random_projection(const TD& y, Rng& rng) {
  std::vector<double> w(y.size());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return ad::sum(ad::mul(y, TD::from(y.shape(), std::move(w))));
}

// Moves freshly initialised parameters off exact zeros (zero biases put ReLU
// inputs on the kink wherever a window sees only padding).
template <typename Params>
void jitter(Params& ps, Rng& rng) {
  for (auto& p : ps.all())
    for (auto& v : p.tensor.mutable_data()) v += rng.uniform(-0.1, 0.1);
}

inline int pick_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1))); }

}  // namespace detail

/// Runs each check over `trials` seeds; returns the worst relative error per check.
inline std::vector<GradSuiteEntry> run_gradient_suite(int trials = 20, std::uint64_t seed = 1) {
  using detail::TD;
  using detail::pick_int;
  using detail::random_leaf;
  using Leaves = std::vector<ad::Parameter<double>>;
  // Each case builds its leaves and a scalar function from an Rng.
  using Case = std::function<std::pair<std::function<TD()>, Leaves>(Rng&)>;
  std::vector<std::pair<std::string, Case>> cases;

  auto unary = [&](std::string name, std::function<TD(const TD&)> op) {
    cases.emplace_back(std::move(name), [op](Rng& rng) {
      TD a = random_leaf(rng, {pick_int(rng, 1, 4), pick_int(rng, 2, 8)});
      auto probe = std::make_shared<Rng>(rng.engine()());
      return std::pair{std::function<TD()>([=] {
                         Rng r = *probe;
                         return detail::random_projection(op(a), r);
                       }),
                       Leaves{{"a", a}}};
    });
  };
  auto binary = [&](std::string name, std::function<TD(const TD&, const TD&)> op, bool channel) {
    cases.emplace_back(std::move(name), [op, channel](Rng& rng) {
      const int c = pick_int(rng, 1, 4), t = pick_int(rng, 2, 8);
      TD a = random_leaf(rng, {c, t});
      TD b = channel ? random_leaf(rng, {c}) : random_leaf(rng, {c, t});
      auto probe = std::make_shared<Rng>(rng.engine()());
      return std::pair{std::function<TD()>([=] {
                         Rng r = *probe;
                         return detail::random_projection(op(a, b), r);
                       }),
                       Leaves{{"a", a}, {"b", b}}};
    });
  };

  binary("add", [](const TD& a, const TD& b) { return ad::add(a, b); }, false);
  binary("sub", [](const TD& a, const TD& b) { return ad::sub(a, b); }, false);
  binary("mul", [](const TD& a, const TD& b) { return ad::mul(a, b); }, false);
  binary("mul_channel", [](const TD& a, const TD& b) { return ad::mul(a, b); }, true);
  unary("scale", [](const TD& a) { return ad::scale(a, 1.7); });
  unary("relu", [](const TD& a) { return ad::relu(a); });
  unary("sigmoid", [](const TD& a) { return ad::sigmoid(a); });
  unary("softmax", [](const TD& a) { return ad::softmax(a); });
  unary("mean_pool_time", [](const TD& a) { return ad::mean_pool_time(a); });
  unary("reshape", [](const TD& a) { return ad::reshape(a, {static_cast<int>(a.size())}); });
  unary("fit_length", [](const TD& a) { return ad::fit_length(a, a.dim(1) + 3); });
  unary("temporal_shift", [](const TD& a) { return ser::temporal_shift(ad::reshape(a, {a.dim(0), 1, a.dim(1)}), 0.25); });

  cases.emplace_back("prelu", [](Rng& rng) {
    TD a = random_leaf(rng, {pick_int(rng, 1, 4), pick_int(rng, 2, 8)}), s = random_leaf(rng, {1});
    return std::pair{std::function<TD()>([=] { return ad::sum(ad::prelu(a, s)); }), Leaves{{"a", a}, {"slope", s}}};
  });
  cases.emplace_back("global_layer_norm", [](Rng& rng) {
    const int c = pick_int(rng, 1, 4);
    TD x = random_leaf(rng, {c, pick_int(rng, 2, 10)}, -2, 2), g = random_leaf(rng, {c}), b = random_leaf(rng, {c});
    TD w = random_leaf(rng, x.shape());
    return std::pair{std::function<TD()>([=] { return ad::sum(ad::mul(ad::global_layer_norm(x, g, b), w)); }),
                     Leaves{{"x", x}, {"gain", g}, {"bias", b}}};
  });
  cases.emplace_back("linear", [](Rng& rng) {
    const int in = pick_int(rng, 1, 6), out = pick_int(rng, 1, 5);
    TD x = random_leaf(rng, {pick_int(rng, 1, 3), in}), w = random_leaf(rng, {out, in}), b = random_leaf(rng, {out});
    TD p = random_leaf(rng, {x.dim(0), out});
    return std::pair{std::function<TD()>([=] { return ad::sum(ad::mul(ad::linear(x, w, b), p)); }),
                     Leaves{{"x", x}, {"w", w}, {"b", b}}};
  });
  cases.emplace_back("cross_entropy", [](Rng& rng) {
    const int n = pick_int(rng, 1, 3);
    TD z = random_leaf(rng, {n, 4}, -3, 3);
    std::vector<int> y(n);
    for (auto& l : y) l = static_cast<int>(rng.index(4));
    return std::pair{std::function<TD()>([=] { return ad::cross_entropy(z, y); }), Leaves{{"logits", z}}};
  });
  cases.emplace_back("conv1d", [](Rng& rng) {
    const int ci = pick_int(rng, 1, 3), co = pick_int(rng, 1, 3), k = pick_int(rng, 1, 4);
    const ad::Conv1dOptions o{.stride = pick_int(rng, 1, 3), .padding = pick_int(rng, 0, 2), .dilation = pick_int(rng, 1, 2)};
    TD x = random_leaf(rng, {ci, pick_int(rng, 8, 15)}), w = random_leaf(rng, {co, ci, k}), b = random_leaf(rng, {co});
    TD p = random_leaf(rng, ad::conv1d(x, w, b, o).shape());
    return std::pair{std::function<TD()>([=] { return ad::sum(ad::mul(ad::conv1d(x, w, b, o), p)); }),
                     Leaves{{"x", x}, {"w", w}, {"b", b}}};
  });
  cases.emplace_back("conv1d_depthwise", [](Rng& rng) {
    const int c = pick_int(rng, 1, 4);
    const ad::Conv1dOptions o{.padding = pick_int(rng, 0, 2), .dilation = pick_int(rng, 1, 3), .groups = c};
    TD x = random_leaf(rng, {c, pick_int(rng, 8, 15)}), w = random_leaf(rng, {c, 1, 3}), b = random_leaf(rng, {c});
    TD p = random_leaf(rng, ad::conv1d(x, w, b, o).shape());
    return std::pair{std::function<TD()>([=] { return ad::sum(ad::mul(ad::conv1d(x, w, b, o), p)); }),
                     Leaves{{"x", x}, {"w", w}, {"b", b}}};
  });
  cases.emplace_back("deconv1d", [](Rng& rng) {
    const int ci = pick_int(rng, 1, 3), co = pick_int(rng, 1, 3), s = pick_int(rng, 1, 3);
    TD x = random_leaf(rng, {ci, pick_int(rng, 3, 7)}), w = random_leaf(rng, {ci, co, pick_int(rng, 1, 4)});
    TD b = random_leaf(rng, {co});
    TD p = random_leaf(rng, ad::deconv1d(x, w, b, s).shape());
    return std::pair{std::function<TD()>([=] { return ad::sum(ad::mul(ad::deconv1d(x, w, b, s), p)); }),
                     Leaves{{"x", x}, {"w", w}, {"b", b}}};
  });
  cases.emplace_back("conv2d", [](Rng& rng) {
    const int ci = pick_int(rng, 1, 3), co = pick_int(rng, 1, 3);
    const ad::Conv2dOptions o{.stride_h = pick_int(rng, 1, 2), .stride_w = pick_int(rng, 1, 2),
                              .pad_h = pick_int(rng, 0, 1), .pad_w = pick_int(rng, 0, 1)};
    TD x = random_leaf(rng, {ci, pick_int(rng, 4, 6), pick_int(rng, 4, 6)});
    TD w = random_leaf(rng, {co, ci, pick_int(rng, 1, 3), pick_int(rng, 1, 3)}), b = random_leaf(rng, {co});
    TD p = random_leaf(rng, ad::conv2d(x, w, b, o).shape());
    return std::pair{std::function<TD()>([=] { return ad::sum(ad::mul(ad::conv2d(x, w, b, o), p)); }),
                     Leaves{{"x", x}, {"w", w}, {"b", b}}};
  });
  cases.emplace_back("sisnr_loss", [](Rng& rng) {
    const int n = pick_int(rng, 16, 64);
    TD est = random_leaf(rng, {1, n});
    std::vector<double> ref(n);
    for (int i = 0; i < n; ++i) ref[i] = est.data()[i] * rng.uniform(0.0, 2.0) + rng.uniform(-0.5, 0.5);
    return std::pair{std::function<TD()>([=] { return ad::sisnr_loss(est, ref); }), Leaves{{"estimate", est}}};
  });
  cases.emplace_back("log_mel", [](Rng& rng) {
    ser::SerConfig c;
    c.n_mels = 8;
    c.fft_size = 32;
    c.hop = 16;
    auto fe = std::make_shared<ser::MelFrontEnd<double>>(c);
    TD x = random_leaf(rng, {1, pick_int(rng, 32, 80)}, -0.5, 0.5);
    TD p = random_leaf(rng, (*fe)(x).shape());
    return std::pair{std::function<TD()>([=] { return ad::sum(ad::mul((*fe)(x), p)); }), Leaves{{"waveform", x}}};
  });

  cases.emplace_back("extract->sisnr_loss", [](Rng& rng) {
    tse::TseConfig c;
    c.encoder_channels = 8;
    c.encoder_kernel = 4;
    c.encoder_stride = 2;
    c.blocks_per_repeat = 2;
    c.repeats = 1;
    c.hidden_channels = 6;
    c.embedding_dim = 4;
    auto m = std::make_shared<tse::TseModel<double>>(c, rng.engine()());
    detail::jitter(m->params(), rng);
    TD y = random_leaf(rng, {1, pick_int(rng, 24, 48)}, -0.5, 0.5), a0 = random_leaf(rng, {1, pick_int(rng, 16, 32)}, -0.5, 0.5);
    std::vector<double> ref(y.size());
    for (auto& v : ref) v = rng.uniform(-0.5, 0.5);
    Leaves leaves = {{"mixture", y}, {"enrollment", a0}};
    for (const auto& p : m->params().all()) leaves.push_back(p);
    return std::pair{std::function<TD()>([=] { return ad::sisnr_loss(m->extract(y, a0), ref); }), leaves};
  });
  cases.emplace_back("classify->cross_entropy", [](Rng& rng) {
    ser::SerConfig c;
    c.n_mels = 8;
    c.fft_size = 32;
    c.hop = 16;
    c.widths = {3, 4};
    c.shift_fraction = 0.34;
    auto m = std::make_shared<ser::SerModel<double>>(c, rng.engine()());
    detail::jitter(m->params(), rng);
    TD x = random_leaf(rng, {1, pick_int(rng, 80, 112)}, -0.5, 0.5);
    const std::vector<int> y = {static_cast<int>(rng.index(4))};
    Leaves leaves = {{"waveform", x}};
    for (const auto& p : m->params().all()) leaves.push_back(p);
    return std::pair{std::function<TD()>([=] { return ad::cross_entropy(m->classify(x), y); }), leaves};
  });

  std::vector<GradSuiteEntry> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    GradSuiteEntry e{cases[i].first, trials, 0.0};
    for (int t = 0; t < trials; ++t) {
      Rng rng(derive_seed(seed, {i, static_cast<std::uint64_t>(t)}));
      auto [fn, leaves] = cases[i].second(rng);
      const auto report = ad::grad_check(fn, std::move(leaves), {.tolerance = 1e-4});
      e.max_rel_error = std::max(e.max_rel_error, report.max_rel_error);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace cocktailser
