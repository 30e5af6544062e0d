// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cocktailser/autodiff/gradcheck.hpp"
#include "cocktailser/autodiff/optim.hpp"
#include "cocktailser/synth.hpp"
#include "cocktailser/tse.hpp"

namespace cocktailser::tse {
namespace {

using ModelF = TseModel<float>;
using ModelD = TseModel<double>;

TseConfig tiny() {
  TseConfig c;
  c.encoder_channels = 8;
  c.encoder_kernel = 4;
  c.encoder_stride = 2;
  c.blocks_per_repeat = 2;
  c.repeats = 1;
  c.hidden_channels = 6;
  c.embedding_dim = 4;
  return c;
}

Waveform noise(std::uint64_t seed, int n, double amp = 0.5) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-amp, amp);
  return Waveform(std::move(v));
}

TEST(TseConfig, Validation) {
  TseConfig c;
  c.validate();
  EXPECT_EQ(c.adaptation_position, 1);
  c.embedding_dim = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.adaptation_position = 7;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.tcn_kernel = 2;
  EXPECT_THROW(ModelF{c}, Error);
}

TEST(Tse, EncodeShapeZeroAndLinearity) {
  TseConfig c;
  ModelF m(c, 3);
  for (int t : {16, 17, 100, 8000}) {
    const auto y = m.encode(ModelF::to_tensor(noise(t, t)));
    EXPECT_EQ(y.shape(), (ad::Shape{64, (t - 16) / 8 + 1}));
  }
  const auto z = m.encode(ModelF::to_tensor(Waveform(std::vector<double>(400, 0.0))));
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(m.encode(ModelF::to_tensor(noise(1, 15))), Error);

  c.encoder_activation = false;
  ModelD lin(c, 3);
  const auto y = noise(5, 800);
  Waveform y2 = y;
  for (auto& v : y2.samples) v *= 2.0;
  const auto a = lin.encode(ModelD::to_tensor(y)), b = lin.encode(ModelD::to_tensor(y2));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b.data()[i], 2.0 * a.data()[i], 1e-12);
}

TEST(Tse, EmbeddingShapeAndShortEnrollment) {
  ModelF m(TseConfig{}, 4);
  const auto e = m.embed_enrollment(noise(2, 4000));
  EXPECT_EQ(e.vector.shape(), (ad::Shape{32}));
  for (float v : e.vector.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(m.embed_enrollment(noise(2, 10)), Error);
}

TEST(Tse, EmbeddingToleratesOneStrideShift) {
  ModelD m(TseConfig{}, 6);
  SynthConfig sc;
  sc.sessions = 1;
  sc.utterances_per_emotion = 2;
  const auto corpus = synth_corpus(sc, 2);
  for (const auto& u : corpus.utterances) {
    if (u.emotion != Emotion::neutral) continue;
    const Waveform& a0 = *u.audio;
    Waveform shifted(std::vector<double>(a0.samples.begin() + 8, a0.samples.end()));
    const auto e1 = m.embed_enrollment(a0).vector, e2 = m.embed_enrollment(shifted).vector;
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < e1.size(); ++i) {
      diff += (e1.data()[i] - e2.data()[i]) * (e1.data()[i] - e2.data()[i]);
      norm += e1.data()[i] * e1.data()[i];
    }
    EXPECT_LT(std::sqrt(diff / norm), 0.10) << u.id;
  }
}

TEST(Tse, MaskIsBounded) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelF m(TseConfig{}, seed);
    // Large random weights push the sigmoid into saturation.
    for (auto& p : m.params().all())
      for (auto& v : p.tensor.mutable_data()) v *= 5.0f;
    const auto y = m.encode(ModelF::to_tensor(noise(seed, 2000, 1.0)));
    const auto mask = m.estimate_mask(y, m.embed_enrollment(noise(seed + 9, 1600, 1.0)));
    EXPECT_EQ(mask.shape(), y.shape());
    for (float v : mask.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Tse, EmbeddingDimensionMismatch) {
  ModelF m(TseConfig{}, 1);
  const auto y = m.encode(ModelF::to_tensor(noise(1, 400)));
  SpeakerEmbedding<float> bad{ad::Tensor<float>::zeros({31})};
  EXPECT_THROW(m.estimate_mask(y, bad), Error);
  EXPECT_THROW(m.estimate_mask(ad::Tensor<float>::zeros({63, 10}), m.embed_enrollment(noise(1, 400))), Error);
}

TEST(Tse, IdentityAdaptationIgnoresEnrollment) {
  TseConfig c;
  c.identity_adaptation = true;
  ModelF m(c, 2);
  const auto y = noise(3, 4000);
  const auto a = m.extract(y, noise(4, 3000)), b = m.extract(y, noise(5, 5000, 0.1));
  EXPECT_EQ(a.samples, b.samples);
  ModelF adaptive(TseConfig{}, 2);
  EXPECT_NE(adaptive.extract(y, noise(4, 3000)).samples, adaptive.extract(y, noise(5, 5000, 0.1)).samples);
}

TEST(Tse, DecodeContract) {
  ModelF m(TseConfig{}, 1);
  const auto zero = m.decode(ad::Tensor<float>::zeros({64, 50}), 413);
  EXPECT_EQ(zero.shape(), (ad::Shape{1, 413}));
  for (float v : zero.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(m.decode(ad::Tensor<float>::zeros({32, 50}), 400), Error);
  for (int t : {16, 999, 1000, 4001}) EXPECT_EQ(m.extract(noise(t, t), noise(7, 800)).size(), static_cast<std::size_t>(t));
}

TEST(Tse, ExtractIsDeterministic) {
  ModelF m(TseConfig{}, 8);
  const auto y = noise(1, 3000), a0 = noise(2, 2000);
  EXPECT_EQ(m.extract(y, a0).samples, m.extract(y, a0).samples);
  ModelF copy(m);
  EXPECT_EQ(copy.extract(y, a0).samples, m.extract(y, a0).samples);
}

TEST(Tse, PassthroughReconstructs) {
  TseConfig c;
  c.identity_mask = true;
  ModelD m(c, 1);
  m.make_passthrough();
  const auto y = noise(11, 4000);
  const auto out = m.extract(y, noise(12, 800));
  for (std::size_t t = 16; t + 16 < y.size(); ++t) EXPECT_NEAR(out.samples[t], y.samples[t], 1e-12);
}

TEST(Tse, AutoencoderFitsEightSignals) {
  TseConfig c;
  c.identity_mask = true;
  ModelF m(c, 5);
  SynthConfig sc;
  sc.sessions = 1;
  sc.utterances_per_emotion = 1;
  sc.duration_s = 0.25;
  const auto corpus = synth_corpus(sc, 3);
  std::vector<Waveform> signals;
  for (const auto& u : corpus.utterances) signals.push_back(*u.audio);
  ASSERT_EQ(signals.size(), 8u);

  std::vector<ad::Parameter<float>> trainable;
  for (auto& p : m.params().all())
    if (p.name == "encoder.weight" || p.name == "decoder.weight") trainable.push_back(p);
  ad::Adam<float> opt;
  opt.add(trainable, 3e-3);
  auto mean_sdr = [&] {
    double s = 0.0;
    for (const auto& y : signals) s += si_sdr(m.extract(y, y), y);
    return s / signals.size();
  };
  for (int step = 0; step < 150; ++step) {
    opt.zero_grad();
    for (const auto& y : signals) ad::sisnr_loss(m.extract(ModelF::to_tensor(y), ModelF::to_tensor(y)), y.samples).backward(1.0f / 8);
    opt.step();
  }
  EXPECT_GE(mean_sdr(), 5.0);
}

TEST(Tse, EndToEndGradientCheck) {
  ModelD m(tiny(), 3);
  auto y = ModelD::to_tensor(noise(1, 40), true);
  auto a0 = ModelD::to_tensor(noise(2, 24), true);
  std::vector<double> ref = noise(3, 40).samples;
  std::vector<ad::Parameter<double>> leaves = {{"mixture", y}, {"enrollment", a0}};
  for (const auto& p : m.params().all()) leaves.push_back(p);
  const auto report = ad::grad_check([&] { return ad::sisnr_loss(m.extract(y, a0), ref); }, leaves,
                                     {.tolerance = 1e-4});
  for (const auto& g : report.groups) EXPECT_LT(g.max_rel_error, 1e-4) << g.name;
  EXPECT_TRUE(report.passed());
}

TEST(Tse, CheckpointRoundTrip) {
  const auto dir = std::filesystem::path(testing::TempDir()) / "cser_tse_ckpt";
  std::filesystem::create_directories(dir);
  ModelF a(TseConfig{}, 1), b(TseConfig{}, 2);
  EXPECT_NE(ad::digest(a.params()), ad::digest(b.params()));
  a.save((dir / "a.ckpt").string());
  b.load((dir / "a.ckpt").string());
  EXPECT_EQ(ad::digest(a.params()), ad::digest(b.params()));
  ModelF small(tiny(), 1);
  EXPECT_THROW(small.load((dir / "a.ckpt").string()), Error);
}

}  // namespace
}  // namespace cocktailser::tse
