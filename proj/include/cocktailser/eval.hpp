// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cocktailser/corpus.hpp"
#include "cocktailser/ser.hpp"
#include "cocktailser/tse.hpp"
#include "json.hpp"

namespace cocktailser {

using Confusion = std::array<std::array<long, kNumEmotions>, kNumEmotions>;  // [true][predicted]

inline void check_predictions(std::span<const int> preds, std::span<const int> labels) {
  CSER_CHECK(!labels.empty(), "accuracy: empty input");
  CSER_CHECK(preds.size() == labels.size(), "accuracy: ", preds.size(), " predictions for ", labels.size(),
             " labels");
  for (std::size_t i = 0; i < labels.size(); ++i)
    CSER_CHECK(labels[i] >= 0 && labels[i] < kNumEmotions && preds[i] >= 0 && preds[i] < kNumEmotions,
               "accuracy: class index out of range at ", i);
}

inline Confusion confusion_matrix(std::span<const int> preds, std::span<const int> labels) {
  check_predictions(preds, labels);
  Confusion c{};
  for (std::size_t i = 0; i < labels.size(); ++i) ++c[labels[i]][preds[i]];
  return c;
}

/// Mean per-class recall over the classes present in `labels`, in percent.
inline double unweighted_accuracy(const Confusion& c) {
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < kNumEmotions; ++k) {
    long row = 0;
    for (long v : c[k]) row += v;
    if (row == 0) continue;
    sum += static_cast<double>(c[k][k]) / row;
    ++present;
  }
  CSER_CHECK(present > 0, "accuracy: empty input");
  return 100.0 * sum / present;
}

inline double weighted_accuracy(const Confusion& c) {
  long total = 0, correct = 0;
  for (int k = 0; k < kNumEmotions; ++k)
    for (int j = 0; j < kNumEmotions; ++j) {
      total += c[k][j];
      if (k == j) correct += c[k][j];
    }
  CSER_CHECK(total > 0, "accuracy: empty input");
  return 100.0 * static_cast<double>(correct) / total;
}

inline double unweighted_accuracy(std::span<const int> preds, std::span<const int> labels) {
  return unweighted_accuracy(confusion_matrix(preds, labels));
}

inline double weighted_accuracy(std::span<const int> preds, std::span<const int> labels) {
  return weighted_accuracy(confusion_matrix(preds, labels));
}

struct ConditionTags {
  std::string method;
  std::string train_set;
  std::string test_set;
  std::string gender_state;
};

struct MetricsReport {
  ConditionTags tags;
  int fold = -1;  // -1: pooled over folds
  double ua = 0.0;
  double wa = 0.0;
  std::array<std::optional<double>, kNumEmotions> per_class_accuracy;
  Confusion confusion{};
  std::optional<double> si_sdr_mean;
  std::optional<double> si_sdri_mean;
  std::vector<int> predictions;
  std::vector<int> labels;
  std::vector<MetricsReport> folds;

  std::size_t count() const { return labels.size(); }
};

/// Fills confusion, UA, WA and per-class accuracy from predictions.
inline MetricsReport make_report(std::vector<int> preds, std::vector<int> labels, ConditionTags tags) {
  MetricsReport r;
  r.tags = std::move(tags);
  r.confusion = confusion_matrix(preds, labels);
  r.ua = unweighted_accuracy(r.confusion);
  r.wa = weighted_accuracy(r.confusion);
  for (int k = 0; k < kNumEmotions; ++k) {
    long row = 0;
    for (long v : r.confusion[k]) row += v;
    if (row > 0) r.per_class_accuracy[k] = 100.0 * static_cast<double>(r.confusion[k][k]) / row;
  }
  r.predictions = std::move(preds);
  r.labels = std::move(labels);
  return r;
}

/// Pools predictions of per-fold reports into one report; SI-SDR means are
/// weighted by fold size. The inputs are kept under `folds`.
inline MetricsReport pool_reports(std::vector<MetricsReport> folds) {
  CSER_CHECK(!folds.empty(), "pool_reports: no folds");
  std::vector<int> preds, labels;
  double sdr = 0.0, sdri = 0.0;
  bool have_sdr = true;
  for (const auto& f : folds) {
    preds.insert(preds.end(), f.predictions.begin(), f.predictions.end());
    labels.insert(labels.end(), f.labels.begin(), f.labels.end());
    have_sdr = have_sdr && f.si_sdr_mean && f.si_sdri_mean;
    if (have_sdr) {
      sdr += *f.si_sdr_mean * f.count();
      sdri += *f.si_sdri_mean * f.count();
    }
  }
  MetricsReport r = make_report(std::move(preds), std::move(labels), folds.front().tags);
  if (have_sdr) {
    r.si_sdr_mean = sdr / r.count();
    r.si_sdri_mean = sdri / r.count();
  }
  r.folds = std::move(folds);
  return r;
}

/// What the classifier hears for a mixture spec.
enum class InputCondition { clean, noisy, denoised };

inline std::string_view to_string(InputCondition c) {
  switch (c) {
    case InputCondition::clean: return "clean";
    case InputCondition::noisy: return "noisy";
    case InputCondition::denoised: return "denoised";
  }
  return "?";
}

/// Classifier input for one spec under a condition; also returns the
/// extractor's SI-SDR and SI-SDRi when it is used.
template <typename T>
Waveform condition_input(const MixtureSpec& spec, InputCondition cond, const tse::TseModel<T>* tse,
                         double* sdr = nullptr, double* sdri = nullptr) {
  RealizedMixture m = realize_mixture(spec);
  switch (cond) {
    case InputCondition::clean: return m.target;
    case InputCondition::noisy: return m.mixture;
    case InputCondition::denoised: {
      CSER_CHECK(tse != nullptr, "denoised condition requires an extractor");
      Waveform est = tse->extract(m.mixture, m.enrollment);
      if (sdr) *sdr = si_sdr(est, m.target);
      if (sdri) *sdri = si_sdr_improvement(est, m.mixture, m.target);
      return est;
    }
  }
  return m.target;
}

template <typename T>
MetricsReport evaluate(const ser::SerModel<T>& model, const tse::TseModel<T>* tse, const std::vector<MixtureSpec>& specs,
                       InputCondition cond, ConditionTags tags) {
  CSER_CHECK(!specs.empty(), "evaluate: no mixtures");
  std::vector<int> preds, labels;
  double sdr_sum = 0.0, sdri_sum = 0.0;
  for (const auto& s : specs) {
    CSER_CHECK(s.target.emotion.has_value(), "evaluate: target ", s.target.id, " has no emotion label");
    double sdr = 0.0, sdri = 0.0;
    Waveform x = condition_input(s, cond, tse, &sdr, &sdri);
    sdr_sum += sdr;
    sdri_sum += sdri;
    preds.push_back(model.predict(model.classify(x)));
    labels.push_back(static_cast<int>(*s.target.emotion));
  }
  if (tags.test_set.empty()) tags.test_set = std::string(to_string(cond));
  MetricsReport r = make_report(std::move(preds), std::move(labels), std::move(tags));
  if (cond == InputCondition::denoised) {
    r.si_sdr_mean = sdr_sum / specs.size();
    r.si_sdri_mean = sdri_sum / specs.size();
  }
  return r;
}

/// Mean SI-SDR / SI-SDRi of an extractor over specs (no classifier).
template <typename T>
std::pair<double, double> separation_quality(const tse::TseModel<T>& tse, const std::vector<MixtureSpec>& specs) {
  CSER_CHECK(!specs.empty(), "separation_quality: no mixtures");
  double sdr = 0.0, sdri = 0.0;
  for (const auto& s : specs) {
    double a = 0.0, b = 0.0;
    condition_input(s, InputCondition::denoised, &tse, &a, &b);
    sdr += a;
    sdri += b;
  }
  return {sdr / specs.size(), sdri / specs.size()};
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::ordered_json to_json(const MetricsReport& r, bool with_predictions = false) {
  nlohmann::ordered_json j;
  j["method"] = r.tags.method;
  j["train_set"] = r.tags.train_set;
  j["test_set"] = r.tags.test_set;
  j["gender_state"] = r.tags.gender_state;
  if (r.fold >= 0) j["fold"] = r.fold;
  j["count"] = r.count();
  j["wa"] = r.wa;
  j["ua"] = r.ua;
  nlohmann::ordered_json pc = nlohmann::ordered_json::object();
  for (Emotion e : kEmotions) {
    const auto& v = r.per_class_accuracy[static_cast<int>(e)];
    pc[std::string(to_string(e))] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  }
  j["per_class_accuracy"] = pc;
  j["confusion"] = r.confusion;
  if (r.si_sdr_mean) j["si_sdr_mean"] = *r.si_sdr_mean;
  if (r.si_sdri_mean) j["si_sdri_mean"] = *r.si_sdri_mean;
  if (with_predictions) {
    j["predictions"] = r.predictions;
    j["labels"] = r.labels;
  }
  if (!r.folds.empty()) {
    j["folds"] = nlohmann::ordered_json::array();
    for (const auto& f : r.folds) j["folds"].push_back(to_json(f, with_predictions));
  }
  return j;
}

/// Aligned-column table: Method | Train Set | Test Set | Gender State | WA | UA | SI-SDR | SI-SDRi.
inline std::string format_table(const std::vector<MetricsReport>& reports) {
  std::vector<std::array<std::string, 8>> rows;
  rows.push_back({"Method", "Train Set", "Test Set", "Gender State", "WA", "UA", "SI-SDR", "SI-SDRi"});
  auto num = [](std::optional<double> v) {
    if (!v) return std::string("-");
    char b[32];
    std::snprintf(b, sizeof(b), "%.2f", *v);
    return std::string(b);
  };
  for (const auto& r : reports)
    rows.push_back({r.tags.method, r.tags.train_set, r.tags.test_set, r.tags.gender_state.empty() ? "-" : r.tags.gender_state,
                    num(r.wa), num(r.ua), num(r.si_sdr_mean), num(r.si_sdri_mean)});
  std::array<std::size_t, 8> width{};
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      const auto& cell = rows[i][c];
      const std::string pad(width[c] - cell.size(), ' ');
      out += c < 4 ? cell + pad : pad + cell;  // text left, numbers right
      out += c + 1 < rows[i].size() ? "  " : "\n";
    }
    if (i == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) out += std::string(width[c], '-') + (c + 1 < width.size() ? "  " : "\n");
    }
  }
  return out;
}

}  // namespace cocktailser
