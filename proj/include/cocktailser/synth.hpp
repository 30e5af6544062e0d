// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Deterministic procedural speech-like corpus.
//
// A speaker is a harmonic source at a speaker-specific F0 (male-coded 90-140 Hz,
// female-coded 170-240 Hz) fed through a speaker-specific two-pole resonator.
// Emotions are fixed modulations of that voice:
//   neutral  none                                       peak 0.7
//   happy    F0 x1.20, 6 Hz amplitude modulation 0.4    peak 0.7
//   angry    F0 x1.10, odd harmonics boosted            peak 0.9
//   sad      F0 x0.85, extra 1/k spectral tilt          peak 0.5
// Every utterance draws its own small jitter from (speaker, emotion, index).

#pragma once

#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>
#include <string>

#include "cocktailser/corpus.hpp"

namespace cocktailser {

struct SynthConfig {
  int sessions = 5;
  int speakers_per_session = 2;  // alternating male-/female-coded
  int utterances_per_emotion = 8;
  double duration_s = 1.0;
  std::string prefix = "Ses";
  // Interferer pools mirror unlabeled read speech: audio keeps the emotion
  // styles but the labels are dropped.
  bool label_emotions = true;

  void validate() const {
    CSER_CHECK(sessions >= 1, "synth: sessions must be >= 1");
    CSER_CHECK(speakers_per_session >= 1, "synth: speakers_per_session must be >= 1");
    CSER_CHECK(utterances_per_emotion >= 1, "synth: utterances_per_emotion must be >= 1");
    CSER_CHECK(duration_s >= 0.05 && duration_s <= 60.0, "synth: duration_s must be in [0.05, 60]");
    CSER_CHECK(!prefix.empty(), "synth: empty prefix");
  }
};

struct VoiceParams {
  double f0 = 120.0;
  double formant_hz = 800.0;
  double formant_radius = 0.95;
};

struct EmotionStyle {
  double f0_scale = 1.0;
  double am_depth = 0.0;
  double am_rate_hz = 6.0;
  double odd_boost = 1.0;
  bool tilt = false;
  double peak = 0.7;
};

inline EmotionStyle emotion_style(Emotion e) {
  switch (e) {
    case Emotion::neutral: return {};
    case Emotion::happy: return {.f0_scale = 1.2, .am_depth = 0.4};
    case Emotion::angry: return {.f0_scale = 1.1, .odd_boost = 2.5, .peak = 0.9};
    case Emotion::sad: return {.f0_scale = 0.85, .tilt = true, .peak = 0.5};
  }
  return {};
}

inline VoiceParams voice_for(std::uint64_t seed, const std::string& speaker_id, Gender g) {
  Rng rng(derive_seed(seed, {hash_string(speaker_id), 0x5F}));
  VoiceParams v;
  v.f0 = g == Gender::male ? rng.uniform(90.0, 140.0) : rng.uniform(170.0, 240.0);
  v.formant_hz = rng.uniform(500.0, 2500.0);
  v.formant_radius = rng.uniform(0.90, 0.97);
  return v;
}

/// Renders one utterance. Output peak is the style's peak times a +-5% jitter.
inline Waveform render_utterance(const VoiceParams& voice, const EmotionStyle& style, std::uint64_t seed,
                                 double duration_s) {
  Rng rng(seed);
  const int n = static_cast<int>(std::lround(duration_s * kSampleRate));
  const double f0 = voice.f0 * style.f0_scale * (1.0 + rng.uniform(-0.03, 0.03));
  const double glide = rng.uniform(-0.05, 0.05);  // linear F0 drift over the utterance
  const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const int harmonics = static_cast<int>(7000.0 / (f0 * 1.06));
  std::vector<double> amp(harmonics + 1);
  for (int k = 1; k <= harmonics; ++k) {
    amp[k] = 1.0 / k;
    if (k % 2 == 1 && k > 1) amp[k] *= style.odd_boost;
    if (style.tilt) amp[k] /= k;
  }

  // Zero-phase harmonics give a band-limited sawtooth: one sharp pulse per
  // period. sin(k x) follows the recurrence 2 cos(x) sin((k-1)x) - sin((k-2)x).
  std::vector<double> src(n);
  double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);  // running fundamental phase
  for (int t = 0; t < n; ++t) {
    const double frac = static_cast<double>(t) / n;
    theta += 2.0 * std::numbers::pi * f0 * (1.0 + glide * frac) / kSampleRate;
    const double c2 = 2.0 * std::cos(theta);
    double prev = 0.0, cur = std::sin(theta), v = 0.0;
    for (int k = 1; k <= harmonics; ++k) {
      v += amp[k] * cur;
      const double next = c2 * cur - prev;
      prev = cur;
      cur = next;
    }
    if (style.am_depth > 0.0)
      v *= 1.0 + style.am_depth * std::sin(2.0 * std::numbers::pi * style.am_rate_hz * t / kSampleRate + am_phase);
    src[t] = v;
  }

  // Speaker resonance: y[t] = (x[t] + x[t-1])/2 + 2 r cos(w) y[t-1] - r^2 y[t-2].
  const double w = 2.0 * std::numbers::pi * voice.formant_hz / kSampleRate;
  const double a1 = 2.0 * voice.formant_radius * std::cos(w), a2 = -voice.formant_radius * voice.formant_radius;
  std::vector<double> y(n);
  for (int t = 0; t < n; ++t)
    y[t] = 0.5 * src[t] + (t >= 1 ? a1 * y[t - 1] : 0.0) + (t >= 2 ? a2 * y[t - 2] : 0.0) +
           0.5 * (t >= 1 ? src[t - 1] : 0.0);

  // 20 ms raised-cosine fades, then peak normalization.
  const int fade = std::min(n / 2, kSampleRate / 50);
  for (int t = 0; t < fade; ++t) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * t / fade);
    y[t] *= g;
    y[n - 1 - t] *= g;
  }
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  const double target = style.peak * (1.0 + rng.uniform(-0.05, 0.05));
  if (peak > 0.0)
    for (auto& v : y) v *= target / peak;
  return Waveform(std::move(y));
}

/// Builds the corpus in memory. Ids look like <prefix>01M_happy_003.
inline CorpusManifest synth_corpus(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CorpusManifest m;
  char buf[64];
  for (int s = 0; s < cfg.sessions; ++s) {
    std::snprintf(buf, sizeof(buf), "%s%02d", cfg.prefix.c_str(), s + 1);
    const std::string session = buf;
    m.sessions.push_back(session);
    for (int p = 0; p < cfg.speakers_per_session; ++p) {
      const Gender g = p % 2 == 0 ? Gender::male : Gender::female;
      std::string speaker = session + (g == Gender::male ? "M" : "F");
      if (cfg.speakers_per_session > 2) speaker += std::to_string(p / 2 + 1);
      const VoiceParams voice = voice_for(seed, speaker, g);
      const std::uint64_t speaker_hash = hash_string(speaker);
      for (Emotion slot : kEmotions) {
        for (int i = 0; i < cfg.utterances_per_emotion; ++i) {
          const std::uint64_t useed = derive_seed(seed, {speaker_hash, static_cast<std::uint64_t>(slot),
                                                         static_cast<std::uint64_t>(i)});
          std::snprintf(buf, sizeof(buf), "_%s_%03d", std::string(to_string(slot)).c_str(), i);
          Utterance u;
          u.id = speaker + buf;
          u.speaker_id = speaker;
          u.session_id = session;
          u.gender = g;
          if (cfg.label_emotions) u.emotion = slot;
          u.audio = std::make_shared<const Waveform>(render_utterance(voice, emotion_style(slot), useed, cfg.duration_s));
          m.utterances.push_back(std::move(u));
        }
      }
    }
  }
  m.validate();
  return m;
}

}  // namespace cocktailser
