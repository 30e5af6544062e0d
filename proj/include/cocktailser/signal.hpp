// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Time-domain waveform primitives shared by the data pipeline, the training
// losses and the evaluation metrics. All metric arithmetic is done in double.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cocktailser/error.hpp"

namespace cocktailser {

inline constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  Waveform() = default;
  explicit Waveform(std::vector<double> s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  void validate() const {
    CSER_CHECK(!samples.empty(), "waveform must have at least one sample");
    CSER_CHECK(sample_rate == kSampleRate, "waveform sample rate ", sample_rate,
               " != ", kSampleRate);
    for (double v : samples) CSER_CHECK(std::isfinite(v), "waveform has non-finite samples");
  }
};

struct SnrDb {
  double value = 0.0;
};

inline double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

inline double power(std::span<const double> x) {
  return x.empty() ? 0.0 : energy(x) / static_cast<double>(x.size());
}

/// y = s0 + sum_i s_i. Lengths must already agree.
inline Waveform mix(std::span<const Waveform> sources) {
  CSER_CHECK(!sources.empty(), "mix: empty source list");
  const auto n = sources.front().size();
  const int rate = sources.front().sample_rate;
  std::vector<double> y(n, 0.0);
  for (const auto& s : sources) {
    CSER_CHECK(s.size() == n, "mix: length mismatch (", s.size(), " vs ", n, ")");
    CSER_CHECK(s.sample_rate == rate, "mix: sample rate mismatch");
    for (std::size_t t = 0; t < n; ++t) y[t] += s.samples[t];
  }
  return Waveform(std::move(y), rate);
}

/// Gain g such that power(target) / power(g * interferer) == 10^(snr/10).
inline double snr_gain(const Waveform& interferer, const Waveform& target, SnrDb snr) {
  const double pi = power(interferer.samples);
  const double pt = power(target.samples);
  CSER_CHECK(pi > 1e-12, "snr_scale: interferer is silent");
  CSER_CHECK(pt > 1e-12, "snr_scale: target is silent");
  CSER_CHECK(std::isfinite(snr.value), "snr_scale: non-finite SNR");
  return std::sqrt(pt / (pi * std::pow(10.0, snr.value / 10.0)));
}

inline Waveform snr_scale(const Waveform& interferer, const Waveform& target, SnrDb snr) {
  const double g = snr_gain(interferer, target, snr);
  Waveform out = interferer;
  for (auto& v : out.samples) v *= g;
  return out;
}

/// Truncates every waveform to the shortest length. Never pads.
inline std::vector<Waveform> trim_to_common_length(std::span<const Waveform> ws) {
  CSER_CHECK(!ws.empty(), "trim_to_common_length: empty list");
  std::size_t n = ws.front().size();
  for (const auto& w : ws) n = std::min(n, w.size());
  std::vector<Waveform> out;
  out.reserve(ws.size());
  for (const auto& w : ws)
    out.emplace_back(std::vector<double>(w.samples.begin(), w.samples.begin() + n), w.sample_rate);
  return out;
}

namespace detail {

inline constexpr double kSiSdrEps = 1e-14;

/// SI-SDR on zero-mean copies of both signals. The stabilizer is scaled by
/// the estimate energy so the value stays exactly invariant to rescaling the
/// estimate, including the perfect-reconstruction case (which caps at
/// 10*log10((1+eps)/eps) ~ 140 dB). When grad is non-null it receives
/// d(SI-SDR)/d(estimate).
inline double si_sdr_impl(std::span<const double> estimate, std::span<const double> reference,
                          std::vector<double>* grad) {
  const std::size_t n = reference.size();
  CSER_CHECK(estimate.size() == n, "si_sdr: length mismatch (", estimate.size(), " vs ", n, ")");
  CSER_CHECK(n >= 1, "si_sdr: empty signals");

  double mean_s = 0.0, mean_e = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    mean_s += reference[t];
    mean_e += estimate[t];
  }
  mean_s /= static_cast<double>(n);
  mean_e /= static_cast<double>(n);

  std::vector<double> s(n), e(n);
  double ss = 0.0, es = 0.0, ee = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    s[t] = reference[t] - mean_s;
    e[t] = estimate[t] - mean_e;
    ss += s[t] * s[t];
    es += e[t] * s[t];
    ee += e[t] * e[t];
  }
  CSER_CHECK(ss / static_cast<double>(n) > 1e-12, "si_sdr: reference is silent");
  CSER_CHECK(std::isfinite(ee) && std::isfinite(es), "si_sdr: non-finite estimate");

  const double alpha = es / ss;
  double target_energy = alpha * alpha * ss;
  double noise_energy = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double d = alpha * s[t] - e[t];
    noise_energy += d * d;
  }
  const double stab = kSiSdrEps * std::max(ee, 1e-300);
  const double num = target_energy + stab;
  const double den = noise_energy + stab;
  const double value = 10.0 * std::log10(num / den);

  if (grad) {
    // num = es^2/ss + eps*ee ; den = |alpha*s - e|^2 + eps*ee
    // d num/de = 2*alpha*s + 2*eps*e ; d den/de = 2*(e - alpha*s) + 2*eps*e
    // (the alpha dependence of den vanishes at the projection optimum).
    // Both are zero-mean, so the mean-removal Jacobian is the identity here.
    const double k = 10.0 / std::log(10.0);
    grad->assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double dnum = 2.0 * alpha * s[t] + 2.0 * kSiSdrEps * e[t];
      const double dden = 2.0 * (e[t] - alpha * s[t]) + 2.0 * kSiSdrEps * e[t];
      (*grad)[t] = k * (dnum / num - dden / den);
    }
  }
  return value;
}

}  // namespace detail

inline double si_sdr(std::span<const double> estimate, std::span<const double> reference) {
  return detail::si_sdr_impl(estimate, reference, nullptr);
}

inline double si_sdr(const Waveform& estimate, const Waveform& reference) {
  return si_sdr(std::span<const double>(estimate.samples), std::span<const double>(reference.samples));
}

inline double si_sdr_improvement(const Waveform& estimate, const Waveform& mixture,
                                 const Waveform& reference) {
  return si_sdr(estimate, reference) - si_sdr(mixture, reference);
}

/// Negative SI-SDR, the extractor's training objective.
inline double sisnr_loss(const Waveform& estimate, const Waveform& reference) {
  return -si_sdr(estimate, reference);
}

/// d sisnr_loss / d estimate.
inline std::vector<double> sisnr_loss_grad(const Waveform& estimate, const Waveform& reference) {
  std::vector<double> g;
  detail::si_sdr_impl(estimate.samples, reference.samples, &g);
  for (auto& v : g) v = -v;
  return g;
}

}  // namespace cocktailser
