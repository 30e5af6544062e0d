// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Compact convolutional emotion classifier over a fixed log-mel front end.
// The front end is differentiable with respect to the waveform so the
// classifier can be trained jointly with an upstream extractor.

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cocktailser/autodiff/checkpoint.hpp"
#include "cocktailser/autodiff/ops.hpp"
#include "cocktailser/rng.hpp"
#include "cocktailser/signal.hpp"

namespace cocktailser::ser {

inline constexpr int kNumClasses = 4;

struct SerConfig {
  int n_mels = 40;
  int fft_size = 400;
  int hop = 160;
  std::vector<int> widths = {16, 32, 32};
  bool use_temporal_shift = true;
  double shift_fraction = 0.125;
  // Fixed affine map applied to log-mel values before the conv stack.
  double feature_offset = 0.0;
  double feature_scale = 0.25;

  void validate() const {
    CSER_CHECK(n_mels >= 8, "ser config: n_mels must be >= 8");
    CSER_CHECK(fft_size >= 2 && hop >= 1, "ser config: invalid fft_size/hop");
    CSER_CHECK(!widths.empty(), "ser config: at least one conv layer");
    for (int w : widths) CSER_CHECK(w >= 1, "ser config: conv widths must be >= 1");
    CSER_CHECK(shift_fraction > 0.0 && shift_fraction <= 0.5, "ser config: shift_fraction must be in (0,0.5]");
    CSER_CHECK(feature_scale > 0.0, "ser config: feature_scale must be positive");
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular HTK-style filterbank spanning 0 Hz to Nyquist, [n_mels, fft/2+1].
inline std::vector<double> mel_filterbank(int n_mels, int fft_size, int sample_rate) {
  const int bins = fft_size / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(top * i / (n_mels + 1));
  std::vector<double> fb(static_cast<std::size_t>(n_mels) * bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb[static_cast<std::size_t>(m) * bins + k] = w;
    }
  }
  return fb;
}

inline int num_frames(int samples, int fft_size, int hop) { return 1 + (samples - fft_size) / hop; }

/// Precomputed analysis matrices for the log-mel front end.
template <typename T>
class MelFrontEnd {
 public:
  explicit MelFrontEnd(const SerConfig& cfg)
      : fft_(cfg.fft_size), hop_(cfg.hop), mels_(cfg.n_mels), bins_(cfg.fft_size / 2 + 1) {
    // Rows 0..bins-1: windowed cosine; rows bins..2*bins-1: windowed sine.
    basis_.resize(2 * bins_, fft_);
    for (int k = 0; k < bins_; ++k)
      for (int n = 0; n < fft_; ++n) {
        const double win = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / fft_);
        const double ang = 2.0 * std::numbers::pi * k * n / fft_;
        basis_(k, n) = static_cast<T>(win * std::cos(ang));
        basis_(bins_ + k, n) = static_cast<T>(win * std::sin(ang));
      }
    const auto fb = mel_filterbank(mels_, fft_, kSampleRate);
    fbank_.resize(mels_, bins_);
    for (int m = 0; m < mels_; ++m)
      for (int k = 0; k < bins_; ++k) fbank_(m, k) = static_cast<T>(fb[static_cast<std::size_t>(m) * bins_ + k]);
  }

  int frames(int samples) const { return num_frames(samples, fft_, hop_); }

  /// log(mel(|STFT(x)|) + 1e-6): [1,T] (or [T]) -> [n_mels, frames].
  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    const int t = x.dim(-1);
    CSER_CHECK(static_cast<int>(x.size()) == t, "log-mel: expects a mono signal");
    CSER_CHECK(t >= fft_, "log-mel: signal of ", t, " samples shorter than fft_size ", fft_);
    const int nf = frames(t);
    const T* xv = x.data().data();

    ad::MatR<T> fr(nf, fft_);
    for (int f = 0; f < nf; ++f)
      std::copy_n(xv + static_cast<std::ptrdiff_t>(f) * hop_, fft_, fr.data() + static_cast<std::ptrdiff_t>(f) * fft_);
    auto spec = std::make_shared<ad::MatR<T>>(fr * basis_.transpose());  // [nf, 2*bins]
    auto mag = std::make_shared<ad::MatR<T>>(nf, bins_);
    mag->array() = (spec->leftCols(bins_).array().square() + spec->rightCols(bins_).array().square()).sqrt();
    auto mel = std::make_shared<ad::MatR<T>>((*mag) * fbank_.transpose());  // [nf, mels]

    std::vector<T> out(static_cast<std::size_t>(mels_) * nf);
    for (int f = 0; f < nf; ++f)
      for (int m = 0; m < mels_; ++m)
        out[static_cast<std::size_t>(m) * nf + f] = std::log((*mel)(f, m) + T(kFloor));

    auto* px = x.node();
    const MelFrontEnd* self = this;
    return ad::make_result<T>({mels_, nf}, std::move(out), {x.shared()},
                              [=](ad::Node<T>& r) {
                                const int bins = self->bins_;
                                ad::MatR<T> dmel = ad::CMapR<T>(r.grad.data(), self->mels_, nf).transpose();
                                dmel.array() /= mel->array() + T(kFloor);
                                ad::MatR<T> dmag = dmel * self->fbank_;  // [nf, bins]
                                ad::MatR<T> dspec(nf, 2 * bins);
                                auto safe = (mag->array() > T(0)).select(mag->array(), T(1));
                                auto live = (mag->array() > T(0)).template cast<T>();
                                dspec.leftCols(bins).array() = dmag.array() * spec->leftCols(bins).array() / safe * live;
                                dspec.rightCols(bins).array() = dmag.array() * spec->rightCols(bins).array() / safe * live;
                                ad::MatR<T> dfr = dspec * self->basis_;  // [nf, fft]
                                T* dx = px->grad_data();
                                for (int f = 0; f < nf; ++f)
                                  ad::MapV<T>(dx + static_cast<std::ptrdiff_t>(f) * self->hop_, self->fft_) +=
                                      dfr.row(f).transpose();
                              });
  }

  static constexpr double kFloor = 1e-6;

 private:
  int fft_, hop_, mels_, bins_;
  ad::MatR<T> basis_;
  ad::MatR<T> fbank_;
};

/// Shifts the first floor(C*fraction) channels one frame forward in time, the
/// next floor(C*fraction) one frame back, zero-filling the vacated edge.
/// Time is the last axis of x: [C, ..., F].
template <typename T>
ad::Tensor<T> temporal_shift(const ad::Tensor<T>& x, double fraction) {
  CSER_CHECK(x.rank() >= 2, "temporal_shift: expects [C,...,F]");
  const int f = x.dim(-1);
  CSER_CHECK(f >= 2, "temporal_shift: needs at least 2 frames, got ", f);
  const int c = x.dim(0);
  const int n_shift = static_cast<int>(std::floor(c * fraction + 1e-9));
  const std::size_t per_channel = x.size() / static_cast<std::size_t>(c);
  const std::size_t rows_per_channel = per_channel / static_cast<std::size_t>(f);
  std::vector<T> out(x.data().begin(), x.data().end());
  const T* xv = x.data().data();
  // direction: +1 moves content later in time, -1 earlier.
  auto shift_rows = [&](int ch, int dir, const T* src, T* dst, bool accumulate) {
    for (std::size_t r = 0; r < rows_per_channel; ++r) {
      const std::size_t base = ch * per_channel + r * f;
      for (int t = 0; t < f; ++t) {
        const int s = t - dir;
        const T v = (s >= 0 && s < f) ? src[base + s] : T(0);
        if (accumulate) dst[base + t] += v;
        else dst[base + t] = v;
      }
    }
  };
  for (int ch = 0; ch < n_shift; ++ch) shift_rows(ch, +1, xv, out.data(), false);
  for (int ch = n_shift; ch < std::min(c, 2 * n_shift); ++ch) shift_rows(ch, -1, xv, out.data(), false);
  auto* px = x.node();
  return ad::make_result<T>(x.shape(), std::move(out), {x.shared()},
                            [=](ad::Node<T>& r) {
                              T* g = px->grad_data();
                              const T* dy = r.grad.data();
                              auto back = [&](int ch, int dir) {
                                for (std::size_t row = 0; row < rows_per_channel; ++row) {
                                  const std::size_t base = ch * per_channel + row * f;
                                  for (int t = 0; t < f; ++t) {
                                    const int s = t - dir;
                                    if (s >= 0 && s < f) g[base + s] += dy[base + t];
                                  }
                                }
                              };
                              for (int ch = 0; ch < c; ++ch) {
                                if (ch < n_shift) back(ch, +1);
                                else if (ch < 2 * n_shift) back(ch, -1);
                                else
                                  for (std::size_t i = 0; i < per_channel; ++i)
                                    g[ch * per_channel + i] += dy[ch * per_channel + i];
                              }
                            });
}

template <typename T>
class SerModel {
 public:
  using Tensor = ad::Tensor<T>;

  explicit SerModel(SerConfig cfg, std::uint64_t seed = 1) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    init(seed);
  }

  SerModel(const SerModel& other) : cfg_(other.cfg_) {
    build();
    params_.copy_values_from(other.params_);
  }
  SerModel& operator=(const SerModel&) = delete;
  SerModel(SerModel&&) noexcept = default;
  SerModel& operator=(SerModel&&) noexcept = default;

  const SerConfig& config() const { return cfg_; }
  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }

  /// Log-mel features of a waveform tensor [1,T] -> [n_mels, frames].
  Tensor features(const Tensor& x) const { return (*frontend_)(x); }

  /// 4 logits from precomputed log-mel features [n_mels, frames].
  Tensor logits_from_features(const Tensor& feats) const {
    CSER_CHECK(feats.rank() == 2 && feats.dim(0) == cfg_.n_mels, "classify: expects [",
               cfg_.n_mels, ",frames] features, got ", ad::shape_str(feats.shape()));
    Tensor h = ad::reshape(feats, {1, feats.dim(0), feats.dim(1)});
    h = ad::scale(add_constant(h, static_cast<T>(cfg_.feature_offset)), static_cast<T>(cfg_.feature_scale));
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      if (cfg_.use_temporal_shift && i > 0) h = temporal_shift(h, cfg_.shift_fraction);
      const int stride = i == 0 ? 1 : 2;
      h = ad::relu(ad::conv2d(h, conv_w_[i], conv_b_[i],
                              {.stride_h = stride, .stride_w = stride, .pad_h = 1, .pad_w = 1}));
    }
    return ad::linear(ad::mean_pool_time(h), fc_w_, fc_b_);
  }

  /// Waveform [1,T] -> logits [4]; differentiable through the waveform.
  Tensor classify(const Tensor& x) const { return logits_from_features(features(x)); }

  Tensor classify(const Waveform& w) const { return classify(to_tensor(w)); }

  int predict(const Tensor& logits) const {
    const auto v = logits.data();
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }

  static Tensor to_tensor(const Waveform& w) {
    const int n = static_cast<int>(w.size());
    return Tensor::from({1, n}, std::vector<T>(w.samples.begin(), w.samples.end()));
  }

  void save(const std::string& path) const { ad::save_checkpoint(params_, path); }
  void load(const std::string& path) { ad::load_checkpoint(params_, path); }

 private:
  static Tensor add_constant(const Tensor& x, T c) {
    if (c == T(0)) return x;
    auto shift = Tensor::from(x.shape(), std::vector<T>(x.size(), c));
    return ad::add(x, shift);
  }

  void build() {
    frontend_ = std::make_shared<MelFrontEnd<T>>(cfg_);
    int in = 1;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      const std::string p = "conv" + std::to_string(i) + ".";
      conv_w_.push_back(params_.add(p + "weight", {cfg_.widths[i], in, 3, 3}));
      conv_b_.push_back(params_.add(p + "bias", {cfg_.widths[i]}));
      in = cfg_.widths[i];
    }
    fc_w_ = params_.add("fc.weight", {kNumClasses, in});
    fc_b_ = params_.add("fc.bias", {kNumClasses});
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_.all()) {
      auto v = p.tensor.mutable_data();
      if (p.tensor.rank() == 1) {
        std::fill(v.begin(), v.end(), T(0));
        continue;
      }
      int fan_in = 1;
      for (int i = 1; i < p.tensor.rank(); ++i) fan_in *= p.tensor.dim(i);
      // He-uniform for the ReLU stack.
      const double bound = std::sqrt(6.0 / fan_in);
      for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  SerConfig cfg_;
  std::shared_ptr<MelFrontEnd<T>> frontend_;
  ad::ParameterSet<T> params_;
  std::vector<Tensor> conv_w_, conv_b_;
  Tensor fc_w_, fc_b_;
};

}  // namespace cocktailser::ser
