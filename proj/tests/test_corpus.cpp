// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "cocktailser/corpus.hpp"
#include "cocktailser/synth.hpp"

namespace cocktailser {
namespace {

namespace fs = std::filesystem;

const CorpusManifest& emotional() {
  static const CorpusManifest m = synth_corpus(SynthConfig{}, 13);
  return m;
}

const CorpusManifest& pool() {
  static const CorpusManifest m = [] {
    SynthConfig c;
    c.sessions = 3;
    c.utterances_per_emotion = 2;
    c.prefix = "lib";
    c.label_emotions = false;
    return synth_corpus(c, 12);
  }();
  return m;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::path(testing::TempDir()) / ("cser_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// Threshold oracle. Reads only the waveform: peak level separates the
// loud/quiet styles, envelope modulation depth separates the rest.

double envelope_modulation(const Waveform& w) {
  const int frame = kSampleRate / 50;
  std::vector<double> rms;
  for (int start = kSampleRate / 20; start + frame <= static_cast<int>(w.size()) - kSampleRate / 20; start += frame) {
    double e = 0.0;
    for (int t = start; t < start + frame; ++t) e += w.samples[t] * w.samples[t];
    rms.push_back(std::sqrt(e / frame));
  }
  const auto [lo, hi] = std::minmax_element(rms.begin(), rms.end());
  return (*hi - *lo) / (*hi + *lo);
}

Emotion oracle_classify(const Waveform& w) {
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.8) return Emotion::angry;
  if (peak < 0.6) return Emotion::sad;
  return envelope_modulation(w) > 0.2 ? Emotion::happy : Emotion::neutral;
}

// Autocorrelation pitch in [60, 400] Hz.
double estimate_f0(const Waveform& w) {
  // Normalized autocorrelation; the shortest lag that is a local peak within
  // 90% of the global maximum avoids octave errors.
  const int lo = kSampleRate / 400, hi = kSampleRate / 60;
  const int n = static_cast<int>(w.size());
  std::vector<double> r(hi + 2, 0.0);
  for (int lag = lo - 1; lag <= hi + 1; ++lag) {
    for (int t = 0; t + lag < n; ++t) r[lag] += w.samples[t] * w.samples[t + lag];
    r[lag] /= (n - lag);
  }
  const double best = *std::max_element(r.begin() + lo, r.begin() + hi + 1);
  for (int lag = lo; lag <= hi; ++lag)
    if (r[lag] >= 0.9 * best && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1])
      return static_cast<double>(kSampleRate) / lag;
  return 0.0;
}

// ---------------------------------------------------------------------------

TEST(Labels, NormalizeMergesExcited) {
  EXPECT_EQ(normalize_label("excited"), Emotion::happy);
  EXPECT_EQ(normalize_label("sad"), Emotion::sad);
  EXPECT_EQ(normalize_label("Neutral"), Emotion::neutral);
  EXPECT_THROW(normalize_label("frustrated"), Error);
  EXPECT_THROW(normalize_label(""), Error);
}

TEST(Labels, NormalizeIsIdempotentOnItsRange) {
  for (Emotion e : kEmotions) EXPECT_EQ(normalize_label(to_string(normalize_label(to_string(e)))), e);
}

TEST(Folds, OneFoldPerSession) {
  const auto plan = make_folds(emotional());
  ASSERT_EQ(plan.folds.size(), 5u);
  std::multiset<std::string> held;
  for (const auto& f : plan.folds) {
    ASSERT_EQ(f.test_sessions.size(), 1u);
    held.insert(f.test_sessions[0]);
    for (const auto& s : f.train_sessions) EXPECT_NE(s, f.test_sessions[0]);
    EXPECT_EQ(f.train_sessions.size() + 1, emotional().sessions.size());
  }
  EXPECT_EQ(held, std::multiset<std::string>(emotional().sessions.begin(), emotional().sessions.end()));
}

TEST(Folds, MinimalAndInvalid) {
  SynthConfig c;
  c.sessions = 2;
  c.utterances_per_emotion = 1;
  c.duration_s = 0.1;
  EXPECT_EQ(make_folds(synth_corpus(c, 1)).folds.size(), 2u);
  c.sessions = 1;
  EXPECT_THROW(make_folds(synth_corpus(c, 1)), Error);
}

TEST(Folds, SpeakersAreDisjointAcrossTrainAndTest) {
  for (int sessions = 2; sessions <= 6; ++sessions) {
    SynthConfig c;
    c.sessions = sessions;
    c.speakers_per_session = 1 + sessions % 3;
    c.utterances_per_emotion = 1;
    c.duration_s = 0.1;
    const auto m = synth_corpus(c, sessions);
    for (const auto& f : make_folds(m).folds) {
      std::set<std::string> train, test;
      for (const auto& u : m.subset(f.train_sessions).utterances) train.insert(u.speaker_id);
      for (const auto& u : m.subset(f.test_sessions).utterances) test.insert(u.speaker_id);
      for (const auto& s : test) EXPECT_EQ(train.count(s), 0u) << s;
    }
  }
}

TEST(Manifest, ValidateRejectsBadStructure) {
  CorpusManifest m = emotional().subset({"Ses01"});
  m.validate();
  auto dup = m;
  dup.utterances.push_back(dup.utterances.front());
  EXPECT_THROW(dup.validate(), Error);
  auto span = m;
  span.sessions.push_back("Ses02");
  span.utterances.back().session_id = "Ses02";
  EXPECT_THROW(span.validate(), Error);
  auto unknown = m;
  unknown.utterances.back().session_id = "Ses09";
  EXPECT_THROW(unknown.validate(), Error);
}

TEST(Pairing, GenderStatesAreHonored) {
  for (auto state : {GenderState::same, GenderState::different}) {
    const auto specs = pair_mixtures(emotional(), pool(), state, 5);
    ASSERT_EQ(specs.size(), emotional().utterances.size());
    for (const auto& s : specs) {
      EXPECT_EQ(s.target.gender == s.interferer.gender, state == GenderState::same);
      EXPECT_EQ(s.gender_state, state);
    }
  }
}

TEST(Pairing, DeterministicAndSeedSensitive) {
  const auto a = pair_mixtures(emotional(), pool(), GenderState::unconstrained, 1);
  const auto b = pair_mixtures(emotional(), pool(), GenderState::unconstrained, 1);
  const auto c = pair_mixtures(emotional(), pool(), GenderState::unconstrained, 2);
  int differ = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(spec_to_json(a[i]), spec_to_json(b[i]));
    differ += a[i].interferer.id != c[i].interferer.id;
  }
  EXPECT_GT(differ, 0);
}

TEST(Pairing, EverySpecSatisfiesInvariants) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SynthConfig ec;
    ec.sessions = 2 + static_cast<int>(seed % 3);
    ec.speakers_per_session = 2 + static_cast<int>(seed % 2) * 2;
    ec.utterances_per_emotion = 2 + static_cast<int>(seed % 2);
    ec.duration_s = 0.1;
    SynthConfig pc = ec;
    pc.prefix = "pool";
    pc.label_emotions = seed % 2 == 0;
    const auto emo = synth_corpus(ec, seed), noise = synth_corpus(pc, seed + 100);
    for (auto state : {GenderState::same, GenderState::different, GenderState::unconstrained}) {
      for (const auto& s : pair_mixtures(emo, noise, state, seed)) {
        EXPECT_NO_THROW(s.validate());
        EXPECT_NE(s.target.speaker_id, s.interferer.speaker_id);
        EXPECT_EQ(s.enrollment.speaker_id, s.target.speaker_id);
        EXPECT_EQ(s.enrollment.emotion, Emotion::neutral);
        EXPECT_NE(s.enrollment.id, s.target.id);
        EXPECT_GE(s.snr.value, -2.5);
        EXPECT_LE(s.snr.value, 2.5);
      }
    }
  }
}

TEST(Pairing, InfeasibleConstraintNamesIt) {
  SynthConfig c;
  c.sessions = 1;
  c.speakers_per_session = 1;  // male-coded only
  c.utterances_per_emotion = 1;
  c.duration_s = 0.1;
  c.prefix = "m";
  const auto males = synth_corpus(c, 3);
  try {
    pair_mixtures(emotional(), males, GenderState::same, 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("gender_state=same"), std::string::npos) << e.what();
  }
  EXPECT_THROW(pair_mixtures(emotional(), CorpusManifest{}, GenderState::unconstrained, 1), Error);
}

TEST(Pairing, MixtureSpecValidateCatchesEachViolation) {
  const auto base = pair_mixtures(emotional(), pool(), GenderState::different, 9).front();
  auto s = base;
  s.interferer = base.target;
  EXPECT_THROW(s.validate(), Error);
  s = base;
  s.enrollment = emotional().find("Ses02M_neutral_000");
  EXPECT_THROW(s.validate(), Error);
  s = base;
  s.enrollment = base.target;
  EXPECT_THROW(s.validate(), Error);
  s = base;
  s.gender_state = GenderState::same;
  EXPECT_THROW(s.validate(), Error);
}

TEST(Enrollment, ForcedChoiceAndDraws) {
  SynthConfig c;
  c.sessions = 1;
  c.utterances_per_emotion = 2;
  c.duration_s = 0.1;
  const auto m = synth_corpus(c, 4);
  const auto& neutral0 = m.find("Ses01M_neutral_000");
  EXPECT_EQ(select_enrollment(m, neutral0, 7).id, "Ses01M_neutral_001");

  const auto& target = emotional().find("Ses03F_neutral_004");
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto& e = select_enrollment(emotional(), target, seed);
    EXPECT_NE(e.id, target.id);
    EXPECT_EQ(e.emotion, Emotion::neutral);
    EXPECT_EQ(e.speaker_id, target.speaker_id);
  }
  EXPECT_EQ(select_enrollment(emotional(), target, 3).id, select_enrollment(emotional(), target, 3).id);

  c.utterances_per_emotion = 1;
  const auto one = synth_corpus(c, 4);
  EXPECT_THROW(select_enrollment(one, one.find("Ses01M_neutral_000"), 1), Error);
}

TEST(Realize, HighSnrAndLengths) {
  PairOptions loud{60.0, 60.0};
  for (const auto& s : pair_mixtures(emotional().subset({"Ses01"}), pool(), GenderState::unconstrained, 3, loud)) {
    const auto r = realize_mixture(s);
    EXPECT_EQ(r.mixture.size(), r.target.size());
    EXPECT_GE(si_sdr(r.mixture, r.target), 40.0);
  }
}

TEST(Realize, ZeroDbMixturesHaveZeroDbInput) {
  // Short tonal utterances can correlate by chance (about 1% of random pairs
  // land outside +-1 dB), so this pins the mixing seed used for evaluation.
  auto specs = pair_mixtures(emotional(), pool(), GenderState::unconstrained, 4, {0.0, 0.0});
  specs.resize(100);
  for (const auto& s : specs) {
    const auto r = realize_mixture(s);
    const double v = si_sdr(r.mixture, r.target);
    EXPECT_GE(v, -1.0) << s.target.id;
    EXPECT_LE(v, 1.0) << s.target.id;
  }
}

TEST(Realize, ZeroGainReturnsTarget) {
  auto s = pair_mixtures(emotional(), pool(), GenderState::same, 4).front();
  s.interferer_gain = 0.0;
  const auto r = realize_mixture(s);
  for (std::size_t i = 0; i < r.mixture.size(); ++i) EXPECT_NEAR(r.mixture.samples[i], r.target.samples[i], 1e-12);
}

TEST(Synth, CountsAndIds) {
  const auto& m = emotional();
  EXPECT_EQ(m.utterances.size(), 320u);
  EXPECT_EQ(m.sessions.size(), 5u);
  for (Emotion e : kEmotions)
    EXPECT_EQ(std::count_if(m.utterances.begin(), m.utterances.end(), [&](const Utterance& u) { return u.emotion == e; }), 80);
  for (const auto& u : pool().utterances) EXPECT_FALSE(u.emotion.has_value());
  SynthConfig bad;
  bad.sessions = 0;
  EXPECT_THROW(synth_corpus(bad, 1), Error);
}

TEST(Synth, BitIdenticalForSameSeed) {
  SynthConfig c;
  c.sessions = 1;
  c.utterances_per_emotion = 2;
  const auto a = synth_corpus(c, 77), b = synth_corpus(c, 77), d = synth_corpus(c, 78);
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    EXPECT_EQ(a.utterances[i].audio->samples, b.utterances[i].audio->samples);
    EXPECT_NE(a.utterances[i].audio->samples, d.utterances[i].audio->samples);
  }
}

TEST(Synth, PitchBandsFollowGender) {
  for (const auto& u : emotional().utterances) {
    if (u.emotion != Emotion::neutral) continue;
    const double f0 = estimate_f0(*u.audio);
    if (u.gender == Gender::male) {
      EXPECT_GT(f0, 90.0 * 0.93) << u.id;
      EXPECT_LT(f0, 140.0 * 1.07) << u.id;
    } else {
      EXPECT_GT(f0, 170.0 * 0.93) << u.id;
      EXPECT_LT(f0, 240.0 * 1.07) << u.id;
    }
  }
}

TEST(Synth, ThresholdOracleSeparatesEmotions) {
  int correct = 0;
  for (const auto& u : emotional().utterances) correct += oracle_classify(*u.audio) == *u.emotion;
  EXPECT_GE(100.0 * correct / emotional().utterances.size(), 90.0);
}

TEST(Files, ManifestRoundTrip) {
  const fs::path dir = scratch("manifest");
  const auto m = emotional().subset({"Ses02"});
  write_manifest(m, dir / "manifest.jsonl", dir / "wav");
  const auto back = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(back.utterances.size(), m.utterances.size());
  EXPECT_EQ(back.sessions, m.sessions);
  for (std::size_t i = 0; i < m.utterances.size(); ++i) {
    const auto& a = m.utterances[i];
    const auto& b = back.utterances[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.speaker_id, b.speaker_id);
    EXPECT_EQ(a.gender, b.gender);
    EXPECT_EQ(a.emotion, b.emotion);
    ASSERT_EQ(a.audio->size(), b.audio->size());
    for (std::size_t t = 0; t < a.audio->size(); ++t)
      EXPECT_NEAR(a.audio->samples[t], b.audio->samples[t], 1.0 / 32768.0);
  }
  // Rewriting the reloaded manifest reproduces the same bytes.
  write_manifest(back, dir / "again.jsonl");
  EXPECT_EQ(ad::read_file((dir / "manifest.jsonl").string()), ad::read_file((dir / "again.jsonl").string()));
}

TEST(Files, IngestionFiltersOutOfScopeLabels) {
  const fs::path dir = scratch("ingest");
  write_wav((dir / "a.wav").string(), Waveform(std::vector<double>(400, 0.1)));
  ad::write_file((dir / "m.jsonl").string(),
                 R"({"id":"u1","speaker_id":"s1","session_id":"S1","gender":"female","emotion":"excited","path":"a.wav","extra":1})"
                 "\n"
                 R"({"id":"u2","speaker_id":"s1","session_id":"S1","gender":"female","emotion":"frustrated","path":"a.wav"})"
                 "\n\n"
                 R"({"id":"u3","speaker_id":"s2","session_id":"S2","gender":"m","emotion":null,"path":"a.wav"})"
                 "\n");
  ManifestReadStats stats;
  const auto m = read_manifest(dir / "m.jsonl", &stats);
  EXPECT_EQ(stats.kept, 2u);
  EXPECT_EQ(stats.filtered, 1u);
  ASSERT_EQ(m.utterances.size(), 2u);
  EXPECT_EQ(m.utterances[0].emotion, Emotion::happy);
  EXPECT_FALSE(m.utterances[1].emotion.has_value());
  EXPECT_EQ(m.sessions, (std::vector<std::string>{"S1", "S2"}));

  ad::write_file((dir / "bad.jsonl").string(), R"({"id":"u1","speaker_id":"s1"})" "\n");
  EXPECT_THROW(read_manifest(dir / "bad.jsonl"), Error);
  EXPECT_THROW(read_manifest(dir / "missing.jsonl"), Error);
}

TEST(Files, SpecsRoundTripByteIdentical) {
  const fs::path dir = scratch("specs");
  auto specs = pair_mixtures(emotional(), pool(), GenderState::different, 8);
  specs[3].interferer_gain = 0.5;
  write_specs(specs, dir / "specs.jsonl");
  const std::string text = ad::read_file((dir / "specs.jsonl").string());
  const auto parsed = parse_specs(text, emotional(), pool());
  ASSERT_EQ(parsed.size(), specs.size());
  EXPECT_EQ(parsed[3].interferer_gain, 0.5);
  std::string again;
  for (const auto& s : parsed) again += spec_to_json(s) + "\n";
  EXPECT_EQ(again, text);
  EXPECT_THROW(parse_specs(R"({"target_id":"nope"})", emotional(), pool()), Error);
  EXPECT_THROW(parse_specs("not json", emotional(), pool()), Error);
}

TEST(Files, SpecsFilterBySession) {
  const auto specs = pair_mixtures(emotional(), pool(), GenderState::unconstrained, 8);
  const auto kept = specs_in_sessions(specs, {"Ses01", "Ses04"});
  EXPECT_EQ(kept.size(), 128u);
  for (const auto& s : kept) EXPECT_TRUE(s.target.session_id == "Ses01" || s.target.session_id == "Ses04");
}

}  // namespace
}  // namespace cocktailser
