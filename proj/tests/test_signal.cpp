// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cocktailser/rng.hpp"
#include "cocktailser/signal.hpp"
#include "cocktailser/wav.hpp"

namespace cocktailser {
namespace {

Waveform random_wave(Rng& rng, std::size_t n, double scale = 0.3) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Waveform(std::move(v));
}

// Straight from the definition, long double, no stabilizer.
double oracle_si_sdr(const std::vector<double>& est, const std::vector<double>& ref) {
  const std::size_t n = ref.size();
  long double me = 0, ms = 0;
  for (std::size_t i = 0; i < n; ++i) me += est[i], ms += ref[i];
  me /= n;
  ms /= n;
  long double dot = 0, ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += (est[i] - me) * (ref[i] - ms);
    ss += (ref[i] - ms) * (ref[i] - ms);
  }
  const long double a = dot / ss;
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double t = a * (ref[i] - ms);
    num += t * t;
    den += (t - (est[i] - me)) * (t - (est[i] - me));
  }
  return static_cast<double>(10.0L * std::log10(num / den));
}

TEST(Mix, SingleSourceIsIdentity) {
  Rng rng(1);
  const Waveform s0 = random_wave(rng, 100);
  const std::vector<Waveform> src = {s0};
  EXPECT_EQ(mix(src).samples, s0.samples);
}

TEST(Mix, HandExample) {
  const std::vector<Waveform> src = {Waveform({0.5, -0.5}), Waveform({0.25, 0.25})};
  const Waveform y = mix(src);
  ASSERT_EQ(y.size(), 2u);
  EXPECT_DOUBLE_EQ(y.samples[0], 0.75);
  EXPECT_DOUBLE_EQ(y.samples[1], -0.25);
}

TEST(Mix, MatchesElementwiseLoop) {
  Rng rng(2);
  const std::vector<Waveform> src = {random_wave(rng, kSampleRate), random_wave(rng, kSampleRate)};
  const Waveform y = mix(src);
  for (std::size_t t = 0; t < y.size(); ++t) ASSERT_EQ(y.samples[t], src[0].samples[t] + src[1].samples[t]);
}

TEST(Mix, CommutativeAndAssociative) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Waveform a = random_wave(rng, 257), b = random_wave(rng, 257), c = random_wave(rng, 257);
    const std::vector<Waveform> abc = {a, b, c}, cab = {c, a, b};
    const std::vector<Waveform> ab = {a, b};
    const std::vector<Waveform> ab_c = {mix(ab), c};
    const Waveform x = mix(abc), y = mix(cab), z = mix(ab_c);
    for (std::size_t t = 0; t < x.size(); ++t) {
      ASSERT_NEAR(x.samples[t], y.samples[t], 1e-12);
      ASSERT_NEAR(x.samples[t], z.samples[t], 1e-12);
    }
  }
}

TEST(Mix, Errors) {
  EXPECT_THROW(mix(std::vector<Waveform>{}), Error);
  EXPECT_THROW(mix(std::vector<Waveform>{Waveform({1.0, 2.0}), Waveform({1.0})}), Error);
}

TEST(SnrScale, ZeroDbEqualPowerIsUnitGain) {
  Rng rng(3);
  Waveform a = random_wave(rng, 4000), b = random_wave(rng, 4000);
  const double k = std::sqrt(power(a.samples) / power(b.samples));
  for (auto& v : b.samples) v *= k;
  EXPECT_NEAR(snr_gain(b, a, SnrDb{0.0}), 1.0, 1e-9);
}

TEST(SnrScale, PowerRatioFourHalvesAmplitude) {
  const Waveform a({1.0, -1.0, 1.0, -1.0}), b({-1.0, 1.0, 1.0, -1.0});
  EXPECT_NEAR(snr_gain(b, a, SnrDb{10.0 * std::log10(4.0)}), 0.5, 1e-6);
  EXPECT_NEAR(snr_gain(b, a, SnrDb{6.0206}), 0.5, 1e-6);
}

TEST(SnrScale, OutputPowerRatioMatchesRequest) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const Waveform t = random_wave(rng, 1000, rng.uniform(0.01, 1.0));
    const Waveform n = random_wave(rng, 1000, rng.uniform(0.01, 1.0));
    const double snr = rng.uniform(-10.0, 10.0);
    const Waveform scaled = snr_scale(n, t, SnrDb{snr});
    EXPECT_NEAR(power(t.samples) / power(scaled.samples), std::pow(10.0, snr / 10.0),
                1e-6 * std::pow(10.0, snr / 10.0));
  }
}

TEST(SnrScale, SilentInputIsAnError) {
  const Waveform quiet(std::vector<double>(100, 0.0)), loud(std::vector<double>(100, 0.5));
  EXPECT_THROW(snr_scale(quiet, loud, SnrDb{0}), Error);
  EXPECT_THROW(snr_scale(loud, quiet, SnrDb{0}), Error);
}

TEST(SiSdr, PerfectReconstructionIsLargeAndFinite) {
  Rng rng(5);
  const Waveform s = random_wave(rng, 1000);
  const double v = si_sdr(s, s);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GE(v, 60.0);
}

TEST(SiSdr, DoubledEstimateEqualsPerfect) {
  Rng rng(6);
  const Waveform s = random_wave(rng, 1000);
  Waveform e = s;
  for (auto& v : e.samples) v *= 2.0;
  EXPECT_NEAR(si_sdr(e, s), si_sdr(s, s), 1e-6);
}

TEST(SiSdr, HandExample) {
  // Zero-mean reference [1,0,-1]; estimate [1,1,-1] -> [2/3,2/3,-4/3]: alpha=1,
  // noise energy 2/3, target energy 2 -> 10 log10(3).
  EXPECT_NEAR(si_sdr(Waveform({1.0, 1.0, -1.0}), Waveform({1.0, 0.0, -1.0})), 4.771, 1e-3);
  EXPECT_NEAR(si_sdr(Waveform({1.0, 1.0, -1.0}), Waveform({1.0, 0.0, -1.0})), 10.0 * std::log10(3.0), 1e-7);
}

TEST(SiSdr, MatchesDefinitionOracle) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 16 + rng.index(500);
    const Waveform s = random_wave(rng, n);
    Waveform e = random_wave(rng, n);
    const double mixw = rng.uniform(0.0, 3.0);
    for (std::size_t t = 0; t < n; ++t) e.samples[t] += mixw * s.samples[t];
    EXPECT_NEAR(si_sdr(e, s), oracle_si_sdr(e.samples, s.samples), 1e-6);
  }
}

TEST(SiSdr, ScaleAndOffsetInvariance) {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const Waveform s = random_wave(rng, 300);
    Waveform e = random_wave(rng, 300);
    for (std::size_t t = 0; t < e.size(); ++t) e.samples[t] += s.samples[t];
    const double base = si_sdr(e, s);
    for (double c : {0.1, 0.5, 2.0, 10.0, 1234.5}) {
      Waveform ec = e;
      for (auto& v : ec.samples) v *= c;
      EXPECT_NEAR(si_sdr(ec, s), base, 1e-6);
    }
    const double dc = rng.uniform(-1.0, 1.0);
    Waveform eo = e, so = s;
    for (auto& v : eo.samples) v += dc;
    for (auto& v : so.samples) v -= dc;
    EXPECT_NEAR(si_sdr(eo, s), base, 1e-6);
    EXPECT_NEAR(si_sdr(e, so), base, 1e-6);
  }
}

TEST(SiSdr, Errors) {
  EXPECT_THROW(si_sdr(Waveform({1.0, 2.0}), Waveform({1.0, 2.0, 3.0})), Error);
  EXPECT_THROW(si_sdr(Waveform({1.0, 2.0, 3.0}), Waveform({0.5, 0.5, 0.5})), Error);  // silent after zero-mean
}

TEST(SiSdrImprovement, NoProcessingIsZero) {
  Rng rng(9);
  const Waveform s = random_wave(rng, 500), n = random_wave(rng, 500);
  const std::vector<Waveform> parts = {s, n};
  const Waveform y = mix(parts);
  EXPECT_NEAR(si_sdr_improvement(y, y, s), 0.0, 1e-9);
}

TEST(SiSdrImprovement, SubtractsMixtureBaseline) {
  const Waveform s({1.0, 0.0, -1.0});
  const Waveform est({1.0, 1.0, -1.0});
  // Mixture = s + n with zero-mean n orthogonal to s and |n|^2 = |s|^2 -> 0 dB.
  const double k = 1.0 / std::sqrt(3.0);
  const Waveform y({1.0 + k, -2.0 * k, -1.0 + k});
  EXPECT_NEAR(si_sdr(y, s), 0.0, 1e-7);
  EXPECT_NEAR(si_sdr_improvement(est, y, s), 4.771, 1e-3);
  EXPECT_NEAR(si_sdr_improvement(est, y, s), si_sdr(est, s) - si_sdr(y, s), 1e-12);
}

TEST(SisnrLoss, NegatesMetric) {
  Rng rng(10);
  const Waveform s = random_wave(rng, 400);
  EXPECT_LE(sisnr_loss(s, s), -60.0);
  Waveform e = random_wave(rng, 400);
  for (std::size_t t = 0; t < e.size(); ++t) e.samples[t] += s.samples[t];
  for (double a : {0.5, 3.0}) {
    Waveform ea = e;
    for (auto& v : ea.samples) v *= a;
    EXPECT_NEAR(sisnr_loss(ea, s), sisnr_loss(e, s), 1e-6);
  }
}

TEST(SisnrLoss, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const Waveform s = random_wave(rng, 64);
    Waveform e = random_wave(rng, 64);
    for (std::size_t t = 0; t < e.size(); ++t) e.samples[t] += rng.uniform(0.0, 2.0) * s.samples[t];
    const auto g = sisnr_loss_grad(e, s);
    const double h = 1e-6;
    for (std::size_t t = 0; t < e.size(); ++t) {
      Waveform p = e, m = e;
      p.samples[t] += h;
      m.samples[t] -= h;
      const double num = (sisnr_loss(p, s) - sisnr_loss(m, s)) / (2 * h);
      EXPECT_LT(std::abs(num - g[t]) / std::max({std::abs(num), std::abs(g[t]), 1e-3}), 1e-5);
    }
  }
}

TEST(Trim, TruncatesToShortestPrefix) {
  Rng rng(11);
  const std::vector<Waveform> ws = {random_wave(rng, 160), random_wave(rng, 100), random_wave(rng, 120)};
  const auto out = trim_to_common_length(ws);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    ASSERT_EQ(out[i].size(), 100u);
    for (std::size_t t = 0; t < 100; ++t) EXPECT_EQ(out[i].samples[t], ws[i].samples[t]);
  }
  const std::vector<Waveform> one = {ws[0]};
  EXPECT_EQ(trim_to_common_length(one)[0].samples, ws[0].samples);
}

TEST(Mixing, ZeroDbUncorrelatedMixtureIsNearZeroDb) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const Waveform s = random_wave(rng, kSampleRate), n = random_wave(rng, kSampleRate, 0.1);
    const std::vector<Waveform> parts = {s, snr_scale(n, s, SnrDb{0.0})};
    const double v = si_sdr(mix(parts), s);
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Wav, RoundTripsQuantizedSamples) {
  Rng rng(13);
  std::vector<double> v(1000);
  for (auto& x : v) x = std::round(rng.uniform(-1.0, 1.0) * 32767.0) / 32768.0;
  const Waveform w(v);
  const Waveform back = decode_wav(encode_wav(w));
  EXPECT_EQ(back.samples, w.samples);
  EXPECT_EQ(back.sample_rate, kSampleRate);
}

TEST(Wav, ReadDividesBy32768AndClipsOnWrite) {
  const Waveform w({-1.0, 0.5, 1.5});
  const Waveform back = decode_wav(encode_wav(w));
  EXPECT_DOUBLE_EQ(back.samples[0], -1.0);
  EXPECT_DOUBLE_EQ(back.samples[1], 16384.0 / 32768.0);
  EXPECT_DOUBLE_EQ(back.samples[2], 32767.0 / 32768.0);
}

TEST(Wav, RejectsUnsupportedFormats) {
  std::string bytes = encode_wav(Waveform({0.1, 0.2}));
  std::string stereo = bytes;
  stereo[22] = 2;
  EXPECT_THROW(decode_wav(stereo), Error);
  std::string rate = bytes;
  rate[24] = 0x44;  // 44100 low byte
  rate[25] = static_cast<char>(0xAC);
  EXPECT_THROW(decode_wav(rate), Error);
  std::string bits = bytes;
  bits[34] = 8;
  EXPECT_THROW(decode_wav(bits), Error);
  EXPECT_THROW(decode_wav(bytes.substr(0, 30)), Error);
  EXPECT_THROW(decode_wav("RIFX"), Error);
}

}  // namespace
}  // namespace cocktailser
