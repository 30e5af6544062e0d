// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Dataset model: utterances and manifests, the 4-class label policy,
// leave-one-session-out folds, two-speaker mixture pairing with neutral
// enrollment, and JSONL manifest / mixture-spec files.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cocktailser/rng.hpp"
#include "cocktailser/signal.hpp"
#include "cocktailser/wav.hpp"
#include "json.hpp"

namespace cocktailser {

enum class Emotion { happy = 0, angry = 1, sad = 2, neutral = 3 };
inline constexpr int kNumEmotions = 4;
inline constexpr std::array<Emotion, kNumEmotions> kEmotions = {Emotion::happy, Emotion::angry, Emotion::sad,
                                                                 Emotion::neutral};

enum class Gender { male, female };
enum class GenderState { same, different, unconstrained };

inline std::string_view to_string(Emotion e) {
  switch (e) {
    case Emotion::happy: return "happy";
    case Emotion::angry: return "angry";
    case Emotion::sad: return "sad";
    case Emotion::neutral: return "neutral";
  }
  return "?";
}

inline std::string_view to_string(Gender g) { return g == Gender::male ? "male" : "female"; }

inline std::string_view to_string(GenderState s) {
  switch (s) {
    case GenderState::same: return "same";
    case GenderState::different: return "different";
    case GenderState::unconstrained: return "unconstrained";
  }
  return "?";
}

namespace detail {
inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace detail

/// Maps a source label to the 4-class set; "excited" is merged into happy.
inline Emotion normalize_label(std::string_view raw) {
  const std::string s = detail::lower(raw);
  if (s == "happy" || s == "excited") return Emotion::happy;
  if (s == "angry") return Emotion::angry;
  if (s == "sad") return Emotion::sad;
  if (s == "neutral") return Emotion::neutral;
  detail::fail("unknown emotion label '", raw, "'");
}

inline Gender parse_gender(std::string_view raw) {
  const std::string s = detail::lower(raw);
  if (s == "male" || s == "m") return Gender::male;
  if (s == "female" || s == "f") return Gender::female;
  detail::fail("unknown gender '", raw, "'");
}

inline GenderState parse_gender_state(std::string_view raw) {
  const std::string s = detail::lower(raw);
  if (s == "same") return GenderState::same;
  if (s == "different") return GenderState::different;
  if (s == "unconstrained") return GenderState::unconstrained;
  detail::fail("unknown gender state '", raw, "' (expected same|different|unconstrained)");
}

struct Utterance {
  std::string id;
  std::string speaker_id;
  std::string session_id;
  Gender gender = Gender::male;
  std::optional<Emotion> emotion;  // pool utterances may be unlabeled
  std::string path;                // used when audio is not held in memory
  std::shared_ptr<const Waveform> audio;
};

/// In-memory audio if present, otherwise the WAV file at `path`.
inline Waveform audio_of(const Utterance& u) {
  if (u.audio) return *u.audio;
  CSER_CHECK(!u.path.empty(), "utterance ", u.id, " has neither audio nor a path");
  return read_wav(u.path);
}

struct CorpusManifest {
  std::vector<Utterance> utterances;
  std::vector<std::string> sessions;

  void validate() const {
    std::set<std::string> ids;
    std::set<std::string> known(sessions.begin(), sessions.end());
    CSER_CHECK(known.size() == sessions.size(), "manifest: duplicate session ids");
    std::map<std::string, std::string> speaker_session;
    for (const auto& u : utterances) {
      CSER_CHECK(ids.insert(u.id).second, "manifest: duplicate utterance id ", u.id);
      CSER_CHECK(known.count(u.session_id), "manifest: utterance ", u.id, " has unknown session ", u.session_id);
      auto [it, fresh] = speaker_session.emplace(u.speaker_id, u.session_id);
      CSER_CHECK(fresh || it->second == u.session_id, "manifest: speaker ", u.speaker_id, " spans sessions ",
                 it->second, " and ", u.session_id);
    }
  }

  const Utterance& find(std::string_view id) const {
    for (const auto& u : utterances)
      if (u.id == id) return u;
    detail::fail("manifest: no utterance with id ", id);
  }

  /// Utterances whose session is in `keep`, sessions restricted accordingly.
  CorpusManifest subset(const std::vector<std::string>& keep) const {
    CorpusManifest out;
    for (const auto& s : sessions)
      if (std::find(keep.begin(), keep.end(), s) != keep.end()) out.sessions.push_back(s);
    for (const auto& u : utterances)
      if (std::find(keep.begin(), keep.end(), u.session_id) != keep.end()) out.utterances.push_back(u);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Folds

struct Fold {
  std::vector<std::string> train_sessions;
  std::vector<std::string> test_sessions;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

/// Leave-one-session-out: one fold per session, in manifest session order.
inline FoldPlan make_folds(const CorpusManifest& manifest) {
  CSER_CHECK(manifest.sessions.size() >= 2, "make_folds: need at least 2 sessions, got ",
             manifest.sessions.size());
  FoldPlan plan;
  for (const auto& held : manifest.sessions) {
    Fold f;
    f.test_sessions = {held};
    for (const auto& s : manifest.sessions)
      if (s != held) f.train_sessions.push_back(s);
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Mixtures

struct MixtureSpec {
  Utterance target;
  Utterance interferer;
  double interferer_gain = 1.0;  // applied on top of the SNR scaling
  SnrDb snr;
  Utterance enrollment;
  GenderState gender_state = GenderState::unconstrained;
  std::uint64_t seed = 0;

  void validate() const {
    CSER_CHECK(target.speaker_id != interferer.speaker_id, "mixture ", target.id,
               ": interferer is the target speaker");
    CSER_CHECK(enrollment.speaker_id == target.speaker_id, "mixture ", target.id,
               ": enrollment is from another speaker");
    CSER_CHECK(enrollment.emotion == Emotion::neutral, "mixture ", target.id, ": enrollment is not neutral");
    CSER_CHECK(enrollment.id != target.id, "mixture ", target.id, ": enrollment equals the target");
    if (gender_state == GenderState::same)
      CSER_CHECK(target.gender == interferer.gender, "mixture ", target.id, ": gender_state=same violated");
    if (gender_state == GenderState::different)
      CSER_CHECK(target.gender != interferer.gender, "mixture ", target.id, ": gender_state=different violated");
  }
};

struct PairOptions {
  double snr_min_db = -2.5;
  double snr_max_db = 2.5;
};

/// A neutral utterance of the target's speaker, other than the target itself.
inline const Utterance& select_enrollment(const CorpusManifest& manifest, const Utterance& target,
                                          std::uint64_t seed) {
  std::vector<const Utterance*> eligible;
  for (const auto& u : manifest.utterances)
    if (u.speaker_id == target.speaker_id && u.id != target.id && u.emotion == Emotion::neutral)
      eligible.push_back(&u);
  CSER_CHECK(!eligible.empty(), "select_enrollment: speaker ", target.speaker_id,
             " has no neutral enrollment candidate other than ", target.id);
  Rng rng(derive_seed(seed, {hash_string(target.id)}));
  return *eligible[rng.index(eligible.size())];
}

inline bool gender_compatible(GenderState state, Gender target, Gender interferer) {
  switch (state) {
    case GenderState::same: return target == interferer;
    case GenderState::different: return target != interferer;
    case GenderState::unconstrained: return true;
  }
  return false;
}

/// One mixture per utterance of `emotional`, with the interferer drawn from
/// `noise_pool` under the gender constraint. Deterministic in `seed`.
inline std::vector<MixtureSpec> pair_mixtures(const CorpusManifest& emotional, const CorpusManifest& noise_pool,
                                              GenderState state, std::uint64_t seed, PairOptions opt = {}) {
  CSER_CHECK(!noise_pool.utterances.empty(), "pair_mixtures: noise pool is empty");
  CSER_CHECK(opt.snr_min_db <= opt.snr_max_db, "pair_mixtures: snr_min_db > snr_max_db");
  std::vector<MixtureSpec> specs;
  specs.reserve(emotional.utterances.size());
  for (const auto& target : emotional.utterances) {
    std::vector<const Utterance*> candidates;
    for (const auto& u : noise_pool.utterances)
      if (u.speaker_id != target.speaker_id && gender_compatible(state, target.gender, u.gender))
        candidates.push_back(&u);
    CSER_CHECK(!candidates.empty(), "pair_mixtures: no interferer satisfies gender_state=", to_string(state),
               " for target ", target.id, " (", to_string(target.gender), ")");
    const std::uint64_t s = derive_seed(seed, {hash_string(target.id)});
    Rng rng(s);
    MixtureSpec spec;
    spec.target = target;
    spec.interferer = *candidates[rng.index(candidates.size())];
    spec.snr = SnrDb{opt.snr_min_db == opt.snr_max_db ? opt.snr_min_db : rng.uniform(opt.snr_min_db, opt.snr_max_db)};
    spec.enrollment = select_enrollment(emotional, target, derive_seed(s, {1}));
    spec.gender_state = state;
    spec.seed = derive_seed(s, {2});
    spec.validate();
    specs.push_back(std::move(spec));
  }
  return specs;
}

struct RealizedMixture {
  Waveform mixture;
  Waveform target;
  Waveform enrollment;
};

inline RealizedMixture realize_mixture(const MixtureSpec& spec) {
  const Waveform target = audio_of(spec.target);
  const Waveform interferer = audio_of(spec.interferer);
  const std::array<Waveform, 2> raw = {target, interferer};
  auto trimmed = trim_to_common_length(raw);
  Waveform scaled = snr_scale(trimmed[1], trimmed[0], spec.snr);
  for (auto& v : scaled.samples) v *= spec.interferer_gain;
  const std::array<Waveform, 2> parts = {trimmed[0], scaled};
  return {mix(parts), std::move(trimmed[0]), audio_of(spec.enrollment)};
}

// ---------------------------------------------------------------------------
// Files

/// Writes one JSON object per utterance. Audio held only in memory is written
/// to `<audio_dir>/<id>.wav` and referenced relative to the manifest.
inline void write_manifest(const CorpusManifest& m, const std::filesystem::path& path,
                           const std::filesystem::path& audio_dir = {}) {
  namespace fs = std::filesystem;
  std::string out;
  const fs::path base = fs::absolute(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  for (const auto& u : m.utterances) {
    std::string ref = u.path;
    if (!ref.empty() && fs::path(ref).is_absolute()) {
      const fs::path rel = fs::path(ref).lexically_relative(base);
      if (!rel.empty()) ref = rel.generic_string();
    }
    if (u.audio && !audio_dir.empty()) {
      fs::create_directories(audio_dir);
      const fs::path wav = audio_dir / (u.id + ".wav");
      write_wav(wav.string(), *u.audio);
      ref = fs::relative(wav, path.parent_path().empty() ? fs::path(".") : path.parent_path()).generic_string();
    }
    nlohmann::ordered_json j;
    j["id"] = u.id;
    j["speaker_id"] = u.speaker_id;
    j["session_id"] = u.session_id;
    j["gender"] = to_string(u.gender);
    j["emotion"] = u.emotion ? nlohmann::ordered_json(to_string(*u.emotion)) : nlohmann::ordered_json(nullptr);
    j["path"] = ref;
    out += j.dump() + "\n";
  }
  ad::write_file(path.string(), out);
}

struct ManifestReadStats {
  std::size_t kept = 0;
  std::size_t filtered = 0;  // records with out-of-scope emotion labels
};

/// Reads a JSONL manifest. Relative paths resolve against the manifest's
/// directory. Records with labels outside the 4-class set are dropped; a
/// missing or null emotion yields an unlabeled utterance. Sessions are listed
/// in order of first appearance. Unknown keys are ignored.
inline CorpusManifest read_manifest(const std::filesystem::path& path, ManifestReadStats* stats = nullptr,
                                    bool load_audio = true) {
  std::ifstream f(path);
  CSER_CHECK(f.good(), "cannot open manifest ", path.string());
  CorpusManifest m;
  ManifestReadStats st;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      detail::fail(path.string(), ":", lineno, ": invalid JSON: ", e.what());
    }
    auto field = [&](const char* key) -> std::string {
      CSER_CHECK(j.contains(key) && j[key].is_string(), path.string(), ":", lineno, ": missing string field '",
                 key, "'");
      return j[key].get<std::string>();
    };
    Utterance u;
    u.id = field("id");
    u.speaker_id = field("speaker_id");
    u.session_id = field("session_id");
    u.gender = parse_gender(field("gender"));
    if (j.contains("emotion") && !j["emotion"].is_null()) {
      try {
        u.emotion = normalize_label(j["emotion"].get<std::string>());
      } catch (const Error&) {
        ++st.filtered;
        continue;
      }
    }
    std::filesystem::path p = field("path");
    if (p.is_relative()) p = path.parent_path() / p;
    u.path = p.lexically_normal().string();
    if (load_audio) u.audio = std::make_shared<const Waveform>(read_wav(u.path));
    if (std::find(m.sessions.begin(), m.sessions.end(), u.session_id) == m.sessions.end())
      m.sessions.push_back(u.session_id);
    m.utterances.push_back(std::move(u));
    ++st.kept;
  }
  m.validate();
  if (stats) *stats = st;
  return m;
}

inline std::string spec_to_json(const MixtureSpec& s) {
  nlohmann::ordered_json j;
  j["target_id"] = s.target.id;
  j["interferer_id"] = s.interferer.id;
  j["snr_db"] = s.snr.value;
  j["enrollment_id"] = s.enrollment.id;
  j["gender_state"] = to_string(s.gender_state);
  j["seed"] = s.seed;
  if (s.interferer_gain != 1.0) j["interferer_gain"] = s.interferer_gain;
  return j.dump();
}

inline void write_specs(const std::vector<MixtureSpec>& specs, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : specs) out += spec_to_json(s) + "\n";
  ad::write_file(path.string(), out);
}

/// Parses spec lines, resolving targets/enrollments in `emotional` and
/// interferers in `noise_pool`. Each spec is re-validated.
inline std::vector<MixtureSpec> parse_specs(std::string_view text, const CorpusManifest& emotional,
                                            const CorpusManifest& noise_pool) {
  std::map<std::string_view, const Utterance*> emo, pool;
  for (const auto& u : emotional.utterances) emo[u.id] = &u;
  for (const auto& u : noise_pool.utterances) pool[u.id] = &u;
  auto lookup = [](const auto& table, const std::string& id, const char* what) -> const Utterance& {
    auto it = table.find(id);
    CSER_CHECK(it != table.end(), "mixture spec: unknown ", what, " id ", id);
    return *it->second;
  };
  std::vector<MixtureSpec> specs;
  std::size_t start = 0;
  int lineno = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string line(text.substr(start, end - start));
    start = end + 1;
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      detail::fail("mixture spec line ", lineno, ": invalid JSON: ", e.what());
    }
    try {
      MixtureSpec s;
      s.target = lookup(emo, j.at("target_id").get<std::string>(), "target");
      s.interferer = lookup(pool, j.at("interferer_id").get<std::string>(), "interferer");
      s.snr = SnrDb{j.at("snr_db").get<double>()};
      s.enrollment = lookup(emo, j.at("enrollment_id").get<std::string>(), "enrollment");
      s.gender_state = parse_gender_state(j.at("gender_state").get<std::string>());
      s.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("interferer_gain")) s.interferer_gain = j["interferer_gain"].get<double>();
      s.validate();
      specs.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      detail::fail("mixture spec line ", lineno, ": ", e.what());
    }
  }
  return specs;
}

inline std::vector<MixtureSpec> read_specs(const std::filesystem::path& path, const CorpusManifest& emotional,
                                           const CorpusManifest& noise_pool) {
  return parse_specs(ad::read_file(path.string()), emotional, noise_pool);
}

/// Specs whose target belongs to one of `sessions`.
inline std::vector<MixtureSpec> specs_in_sessions(const std::vector<MixtureSpec>& specs,
                                                  const std::vector<std::string>& sessions) {
  std::vector<MixtureSpec> out;
  for (const auto& s : specs)
    if (std::find(sessions.begin(), sessions.end(), s.target.session_id) != sessions.end()) out.push_back(s);
  return out;
}

}  // namespace cocktailser
