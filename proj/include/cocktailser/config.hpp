// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Run configuration as flat dotted keys, one `key = value` per line.
// Lines starting with '#' are comments. Unknown keys are errors.

#pragma once

#include <charconv>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cocktailser/synth.hpp"
#include "cocktailser/trainer.hpp"

namespace cocktailser {

struct RunConfig {
  std::uint64_t seed = 1;
  int jobs = 1;
  SynthConfig synth;
  GenderState gender_state = GenderState::unconstrained;
  PairOptions pairing;
  tse::TseConfig tse;
  ser::SerConfig ser;
  train::TrainConfig pretrain = train::default_train_config(train::Stage::pretrain_tse);
  train::TrainConfig base = train::default_train_config(train::Stage::base);
  train::TrainConfig ft = train::default_train_config(train::Stage::ft);

  void validate() const {
    CSER_CHECK(jobs >= 1, "config: jobs must be >= 1");
    synth.validate();
    CSER_CHECK(pairing.snr_min_db <= pairing.snr_max_db, "config: mix.snr_min_db > mix.snr_max_db");
    tse.validate();
    ser.validate();
    pretrain.validate();
    base.validate();
    ft.validate();
  }

  train::CvConfig cv() const {
    train::CvConfig c;
    c.ser = ser;
    c.ser_train = base;
    c.ft = ft;
    c.pairing = pairing;
    c.gender_state = gender_state;
    c.seed = seed;
    c.jobs = jobs;
    return c;
  }
};

namespace detail {

template <typename N>
N parse_number(std::string_view key, std::string_view v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  CSER_CHECK(ec == std::errc() && p == end, "config: key '", key, "': invalid value '", v, "'");
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: key '", key, "': invalid value '", v, "' (expected true|false)");
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Binds every configurable field of a RunConfig to its dotted key.
class ConfigSchema {
 public:
  explicit ConfigSchema(RunConfig& cfg) {
    num("seed", cfg.seed);
    num("jobs", cfg.jobs);
    num("synth.sessions", cfg.synth.sessions);
    num("synth.speakers_per_session", cfg.synth.speakers_per_session);
    num("synth.utterances_per_emotion", cfg.synth.utterances_per_emotion);
    num("synth.duration_s", cfg.synth.duration_s);
    str("synth.prefix", cfg.synth.prefix);
    flag("synth.label_emotions", cfg.synth.label_emotions);
    bind("mix.gender_state", [&cfg](std::string_view, std::string_view v) { cfg.gender_state = parse_gender_state(v); },
         [&cfg] { return std::string(to_string(cfg.gender_state)); });
    num("mix.snr_min_db", cfg.pairing.snr_min_db);
    num("mix.snr_max_db", cfg.pairing.snr_max_db);

    num("tse.encoder_channels", cfg.tse.encoder_channels);
    num("tse.encoder_kernel", cfg.tse.encoder_kernel);
    num("tse.encoder_stride", cfg.tse.encoder_stride);
    num("tse.blocks_per_repeat", cfg.tse.blocks_per_repeat);
    num("tse.repeats", cfg.tse.repeats);
    num("tse.hidden_channels", cfg.tse.hidden_channels);
    num("tse.tcn_kernel", cfg.tse.tcn_kernel);
    num("tse.embedding_dim", cfg.tse.embedding_dim);
    num("tse.adaptation_position", cfg.tse.adaptation_position);

    num("ser.n_mels", cfg.ser.n_mels);
    num("ser.fft_size", cfg.ser.fft_size);
    num("ser.hop", cfg.ser.hop);
    bind("ser.widths",
         [&cfg](std::string_view key, std::string_view v) {
           std::vector<int> w;
           std::size_t start = 0;
           while (start <= v.size()) {
             const auto end = std::min(v.find(',', start), v.size());
             w.push_back(detail::parse_number<int>(key, detail::trim(v.substr(start, end - start))));
             start = end + 1;
           }
           cfg.ser.widths = std::move(w);
         },
         [&cfg] {
           std::string s;
           for (std::size_t i = 0; i < cfg.ser.widths.size(); ++i) s += (i ? "," : "") + std::to_string(cfg.ser.widths[i]);
           return s;
         });
    flag("ser.use_temporal_shift", cfg.ser.use_temporal_shift);
    num("ser.shift_fraction", cfg.ser.shift_fraction);
    num("ser.feature_offset", cfg.ser.feature_offset);
    num("ser.feature_scale", cfg.ser.feature_scale);

    stage("train.pretrain.", cfg.pretrain);
    stage("train.base.", cfg.base);
    stage("train.ft.", cfg.ft);
  }

  /// Applies one `key = value` assignment.
  void set(std::string_view key, std::string_view value) {
    const auto it = fields_.find(std::string(key));
    CSER_CHECK(it != fields_.end(), "config: unknown key '", key, "'");
    it->second.set(key, value);
  }

  /// Applies a whole file's text. Errors carry the line number.
  void apply_text(std::string_view text, std::string_view origin = "config") {
    std::size_t start = 0;
    int lineno = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      const auto line = detail::trim(text.substr(start, end - start));
      start = end + 1;
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      CSER_CHECK(eq != std::string_view::npos, origin, ":", lineno, ": expected key = value");
      try {
        set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
      } catch (const Error& e) {
        detail::fail(origin, ":", lineno, ": ", e.what());
      }
    }
  }

  /// Parses `key=value` (as given to --set).
  void apply_assignment(std::string_view kv) {
    const auto eq = kv.find('=');
    CSER_CHECK(eq != std::string_view::npos, "config: override '", kv, "' is not key=value");
    set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }

  /// Every key with its current value, sorted; re-parsable by apply_text.
  std::string snapshot() const {
    std::string out;
    for (const auto& [k, f] : fields_) out += k + " = " + f.get() + "\n";
    return out;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields_) k.push_back(name);
    return k;
  }

 private:
  struct Field {
    std::function<void(std::string_view, std::string_view)> set;
    std::function<std::string()> get;
  };

  void bind(std::string key, std::function<void(std::string_view, std::string_view)> set,
            std::function<std::string()> get) {
    fields_[std::move(key)] = {std::move(set), std::move(get)};
  }

  template <typename N>
  void num(std::string key, N& field) {
    bind(std::move(key), [&field](std::string_view k, std::string_view v) { field = detail::parse_number<N>(k, v); },
         [&field] {
           if constexpr (std::is_floating_point_v<N>) return detail::format_double(field);
           else return std::to_string(field);
         });
  }

  void str(std::string key, std::string& field) {
    bind(std::move(key), [&field](std::string_view, std::string_view v) { field = std::string(v); },
         [&field] { return field; });
  }

  void flag(std::string key, bool& field) {
    bind(std::move(key), [&field](std::string_view k, std::string_view v) { field = detail::parse_bool(k, v); },
         [&field] { return std::string(field ? "true" : "false"); });
  }

  void stage(const std::string& p, train::TrainConfig& t) {
    num(p + "max_epochs", t.max_epochs);
    num(p + "batch_size", t.batch_size);
    num(p + "lr", t.lr);
    num(p + "lr_ser", t.lr_ser);
    num(p + "weight_sisnr", t.weight_sisnr);
    num(p + "weight_ce", t.weight_ce);
    num(p + "patience", t.patience);
    num(p + "val_fraction", t.val_fraction);
    num(p + "crop_s", t.crop_s);
    num(p + "clip_norm", t.clip_norm);
    num(p + "max_steps", t.max_steps);
  }

  std::map<std::string, Field> fields_;
};

/// Config file (optional) then overrides, validated.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  ConfigSchema schema(cfg);
  if (!path.empty()) schema.apply_text(ad::read_file(path), path);
  for (const auto& kv : overrides) schema.apply_assignment(kv);
  cfg.validate();
  return cfg;
}

}  // namespace cocktailser
