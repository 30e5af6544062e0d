// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Two-stage training.
//   stage 1  pretrain_tse: extractor on two-speaker mixtures, SiSNR loss.
//   stage 2  train_base:   extractor frozen, classifier on its outputs, CE loss.
//            train_ft:     extractor fine-tuned jointly with a new classifier,
//                          loss = w_sisnr * SiSNR + w_ce * CE.
// run_cv wraps either stage-2 regime (or the clean / noisy baselines) in
// leave-one-session-out cross-validation.

#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "cocktailser/autodiff/optim.hpp"
#include "cocktailser/corpus.hpp"
#include "cocktailser/eval.hpp"
#include "cocktailser/ser.hpp"
#include "cocktailser/tse.hpp"
#include "json.hpp"

namespace cocktailser::train {

using Tse = tse::TseModel<float>;
using Ser = ser::SerModel<float>;

enum class Stage { pretrain_tse, base, ft };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::pretrain_tse: return "pretrain_tse";
    case Stage::base: return "base";
    case Stage::ft: return "ft";
  }
  return "?";
}

struct TrainConfig {
  int max_epochs = 40;
  int batch_size = 8;
  double lr = 1e-3;
  double lr_ser = 1e-3;  // ft only: the classifier trained from scratch
  double weight_sisnr = 1.0;
  double weight_ce = 1.0;
  int patience = 5;
  double val_fraction = 0.1;
  double crop_s = 0.0;  // random training crops (pretraining); 0 = whole mixtures
  double clip_norm = 5.0;
  long max_steps = 0;  // 0 = no cap
  std::uint64_t seed = 1;

  void validate() const {
    CSER_CHECK(max_epochs >= 1, "train: max_epochs must be >= 1");
    CSER_CHECK(batch_size >= 1, "train: batch_size must be >= 1");
    CSER_CHECK(lr > 0.0 && lr_ser > 0.0, "train: learning rates must be positive");
    CSER_CHECK(weight_sisnr >= 0.0 && weight_ce >= 0.0, "train: loss weights must be >= 0");
    CSER_CHECK(patience >= 1, "train: patience must be >= 1");
    CSER_CHECK(val_fraction >= 0.0 && val_fraction < 1.0, "train: val_fraction must be in [0,1)");
    CSER_CHECK(crop_s >= 0.0, "train: crop_s must be >= 0");
    CSER_CHECK(clip_norm >= 0.0, "train: clip_norm must be >= 0");
    CSER_CHECK(max_steps >= 0, "train: max_steps must be >= 0");
  }
};

inline TrainConfig default_train_config(Stage s) {
  TrainConfig c;
  switch (s) {
    case Stage::pretrain_tse:
      c.max_epochs = 30;
      c.crop_s = 0.5;
      break;
    case Stage::base:
      c.max_epochs = 40;
      break;
    case Stage::ft:
      // Same budget as base: the classifier starts from scratch in both.
      c.max_epochs = 40;
      c.lr = 1e-4;
      break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Log

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double sisnr = 0.0;  // batch mean SiSNR loss (0 when unused)
  double ce = 0.0;     // batch mean CE loss (0 when unused)
  double total = 0.0;  // weight_sisnr * sisnr + weight_ce * ce
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainLog {
  std::string stage;
  double weight_sisnr = 1.0;
  double weight_ce = 1.0;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;

  std::string to_jsonl() const {
    std::string out;
    for (const auto& s : steps) {
      nlohmann::ordered_json j;
      j["stage"] = stage;
      j["kind"] = "step";
      j["step"] = s.step;
      j["epoch"] = s.epoch;
      j["L_SiSNR"] = s.sisnr;
      j["L_CE"] = s.ce;
      j["total"] = s.total;
      out += j.dump() + "\n";
    }
    for (const auto& e : epochs) {
      nlohmann::ordered_json j;
      j["stage"] = stage;
      j["kind"] = "epoch";
      j["epoch"] = e.epoch;
      j["train_loss"] = e.train_loss;
      j["val_loss"] = e.val_loss;
      j["best"] = e.epoch == best_epoch;
      out += j.dump() + "\n";
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Shared machinery

/// Seeded split of [0, n) into (train, validation). A non-zero fraction keeps
/// at least one item on each side when n >= 2.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, double fraction,
                                                                                      std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  if (n_val == 0) return {idx, {}};
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

template <typename V>
std::vector<V> pick(const std::vector<V>& xs, const std::vector<std::size_t>& idx) {
  std::vector<V> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(xs[i]);
  return out;
}

inline ad::Tensor<float> to_tensor(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  return ad::Tensor<float>::from({1, n}, std::vector<float>(x.begin(), x.end()));
}

/// Tracks the best validation loss and a copy of the parameters at that point.
template <typename... Models>
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  /// Returns true when training should stop.
  bool update(int epoch, double val_loss, const Models&... models) {
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch;
      bad_ = 0;
      snaps_ = {ad::snapshot(models.params())...};
      return false;
    }
    return ++bad_ >= patience_;
  }

  void restore(Models&... models) const {
    if (snaps_.empty()) return;
    std::size_t i = 0;
    (ad::restore(models.params(), snaps_[i++]), ...);
  }

  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int bad_ = 0;
  std::vector<std::vector<ad::CheckpointEntry>> snaps_;
};

struct TseExample {
  Waveform mixture, target, enrollment;
  int label = -1;
};

inline std::vector<TseExample> realize_all(const std::vector<MixtureSpec>& specs) {
  std::vector<TseExample> out;
  out.reserve(specs.size());
  for (const auto& s : specs) {
    RealizedMixture m = realize_mixture(s);
    out.push_back({std::move(m.mixture), std::move(m.target), std::move(m.enrollment),
                   s.target.emotion ? static_cast<int>(*s.target.emotion) : -1});
  }
  return out;
}

/// Stage-1 hook: called after each epoch with the current model; returning
/// true ends training early (the current weights are kept).
using TseEpochHook = std::function<bool(const Tse&, int epoch, long steps)>;

// ---------------------------------------------------------------------------
// Stage 1

/// Minimizes the SiSNR loss of extract(y, a0) against the clean target.
/// Returns the best-validation model (or the final one when there is no
/// validation split).
inline Tse pretrain_tse(const std::vector<MixtureSpec>& specs, const tse::TseConfig& tse_cfg, const TrainConfig& cfg,
                        TrainLog* log = nullptr, const TseEpochHook& hook = {}) {
  cfg.validate();
  CSER_CHECK(!specs.empty(), "pretrain_tse: no mixtures");
  Tse model(tse_cfg, derive_seed(cfg.seed, {0x7E}));
  const auto data = realize_all(specs);
  auto [tr, val] = split_validation(data.size(), cfg.val_fraction, derive_seed(cfg.seed, {0x5A}));

  ad::Adam<float> opt;
  opt.add(model.params().all(), cfg.lr);
  EarlyStopper<Tse> stopper(cfg.patience);
  TrainLog local;
  TrainLog& lg = log ? *log : local;
  lg.stage = std::string(to_string(Stage::pretrain_tse));
  Rng rng(derive_seed(cfg.seed, {0xC0}));
  const std::size_t crop = static_cast<std::size_t>(cfg.crop_s * kSampleRate);

  long step = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
    std::vector<std::size_t> order = tr;
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size() && !stop; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      const float inv = 1.0f / static_cast<float>(b1 - b0);
      double batch_loss = 0.0;
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& ex = data[order[i]];
        std::size_t off = 0, len = ex.mixture.size();
        if (crop > 0 && len > crop) {
          off = rng.index(len - crop + 1);
          len = crop;
        }
        auto y = to_tensor(std::span<const double>(ex.mixture.samples).subspan(off, len));
        auto a0 = to_tensor(ex.enrollment.samples);
        auto loss = ad::sisnr_loss(model.extract(y, a0), std::span<const double>(ex.target.samples).subspan(off, len));
        loss.backward(inv);
        batch_loss += loss.item();
      }
      ad::clip_grad_norm(model.params().all(), cfg.clip_norm);
      opt.step();
      opt.zero_grad();
      batch_loss /= static_cast<double>(b1 - b0);
      epoch_loss += batch_loss * static_cast<double>(b1 - b0);
      lg.steps.push_back({++step, epoch, batch_loss, 0.0, cfg.weight_sisnr * batch_loss});
      if (cfg.max_steps && step >= cfg.max_steps) stop = true;
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(1, tr.size()));

    double val_loss = epoch_loss;
    if (!val.empty()) {
      val_loss = 0.0;
      for (auto i : val) {
        const auto& ex = data[i];
        val_loss += sisnr_loss(model.extract(ex.mixture, ex.enrollment), ex.target);
      }
      val_loss /= static_cast<double>(val.size());
    }
    lg.epochs.push_back({epoch, epoch_loss, val_loss});
    spdlog::info("pretrain epoch {} step {} train {:.3f} val {:.3f}", epoch, step, epoch_loss, val_loss);
    if (!std::isfinite(val_loss)) detail::fail("pretrain_tse: non-finite loss at epoch ", epoch);
    if (!val.empty() && stopper.update(epoch, val_loss, model)) stop = true;
    if (hook && hook(model, epoch, step)) {
      lg.best_epoch = epoch;
      return model;
    }
  }
  if (!val.empty()) {
    stopper.restore(model);
    lg.best_epoch = stopper.best_epoch();
  } else {
    lg.best_epoch = lg.epochs.empty() ? 0 : lg.epochs.back().epoch;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Stage 2

/// Replaces every mixture by extract(mixture, enrollment), keeping ids,
/// labels and sessions of the targets.
inline CorpusManifest denoise_corpus(const Tse& tse, const std::vector<MixtureSpec>& specs) {
  CorpusManifest out;
  for (const auto& s : specs) {
    RealizedMixture m = realize_mixture(s);
    Utterance u = s.target;
    u.path.clear();
    u.audio = std::make_shared<const Waveform>(tse.extract(m.mixture, m.enrollment));
    if (std::find(out.sessions.begin(), out.sessions.end(), u.session_id) == out.sessions.end())
      out.sessions.push_back(u.session_id);
    out.utterances.push_back(std::move(u));
  }
  return out;
}

/// Classifier trained with CE on fixed inputs. Features are computed once.
inline Ser train_ser(const std::vector<Waveform>& inputs, const std::vector<int>& labels,
                     const std::vector<Waveform>& val_inputs, const std::vector<int>& val_labels,
                     const ser::SerConfig& ser_cfg, const TrainConfig& cfg, TrainLog* log = nullptr) {
  cfg.validate();
  CSER_CHECK(!inputs.empty() && inputs.size() == labels.size(), "train_ser: need matching non-empty inputs/labels");
  CSER_CHECK(val_inputs.size() == val_labels.size(), "train_ser: validation inputs/labels mismatch");
  Ser model(ser_cfg, derive_seed(cfg.seed, {0x5E}));
  auto feats = [&](const std::vector<Waveform>& xs) {
    std::vector<ad::Tensor<float>> f;
    f.reserve(xs.size());
    for (const auto& x : xs) f.push_back(model.features(Ser::to_tensor(x)));
    return f;
  };
  const auto train_f = feats(inputs);
  const auto val_f = feats(val_inputs);

  ad::Adam<float> opt;
  opt.add(model.params().all(), cfg.lr);
  EarlyStopper<Ser> stopper(cfg.patience);
  TrainLog local;
  TrainLog& lg = log ? *log : local;
  if (lg.stage.empty()) lg.stage = "ser";
  Rng rng(derive_seed(cfg.seed, {0xB5}));
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);

  auto ce_of = [&](const ad::Tensor<float>& f, int label) {
    auto logits = ad::reshape(model.logits_from_features(f), {1, ser::kNumClasses});
    return ad::cross_entropy(logits, std::span<const int>(&label, 1));
  };

  long step = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size() && !stop; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      const float inv = 1.0f / static_cast<float>(b1 - b0);
      double batch_loss = 0.0;
      for (std::size_t i = b0; i < b1; ++i) {
        auto loss = ce_of(train_f[order[i]], labels[order[i]]);
        loss.backward(inv);
        batch_loss += loss.item();
      }
      ad::clip_grad_norm(model.params().all(), cfg.clip_norm);
      opt.step();
      opt.zero_grad();
      batch_loss /= static_cast<double>(b1 - b0);
      epoch_loss += batch_loss * static_cast<double>(b1 - b0);
      lg.steps.push_back({++step, epoch, 0.0, batch_loss, cfg.weight_ce * batch_loss});
      if (cfg.max_steps && step >= cfg.max_steps) stop = true;
    }
    epoch_loss /= static_cast<double>(inputs.size());
    double val_loss = epoch_loss;
    if (!val_f.empty()) {
      val_loss = 0.0;
      for (std::size_t i = 0; i < val_f.size(); ++i) val_loss += ce_of(val_f[i], val_labels[i]).item();
      val_loss /= static_cast<double>(val_f.size());
    }
    lg.epochs.push_back({epoch, epoch_loss, val_loss});
    spdlog::debug("{} epoch {} train {:.4f} val {:.4f}", lg.stage, epoch, epoch_loss, val_loss);
    if (!std::isfinite(val_loss)) detail::fail("train_ser: non-finite loss at epoch ", epoch);
    if (!val_f.empty() && stopper.update(epoch, val_loss, model)) stop = true;
  }
  if (!val_f.empty()) {
    stopper.restore(model);
    lg.best_epoch = stopper.best_epoch();
  } else {
    lg.best_epoch = lg.epochs.back().epoch;
  }
  return model;
}

inline std::vector<int> labels_of(const std::vector<MixtureSpec>& specs) {
  std::vector<int> y;
  y.reserve(specs.size());
  for (const auto& s : specs) {
    CSER_CHECK(s.target.emotion.has_value(), "target ", s.target.id, " has no emotion label");
    y.push_back(static_cast<int>(*s.target.emotion));
  }
  return y;
}

inline std::vector<Waveform> inputs_of(const std::vector<MixtureSpec>& specs, InputCondition cond,
                                       const Tse* tse = nullptr) {
  std::vector<Waveform> xs;
  xs.reserve(specs.size());
  for (const auto& s : specs) xs.push_back(condition_input(s, cond, tse));
  return xs;
}

/// Cascade regime: the extractor is frozen and only used to denoise.
inline Ser train_base(const Tse& tse, const std::vector<MixtureSpec>& train_specs,
                      const std::vector<MixtureSpec>& val_specs, const ser::SerConfig& ser_cfg,
                      const TrainConfig& cfg, TrainLog* log = nullptr) {
  if (log) log->stage = std::string(to_string(Stage::base));
  auto inputs = [&](const std::vector<MixtureSpec>& specs) {
    std::vector<Waveform> xs;
    for (const auto& u : denoise_corpus(tse, specs).utterances) xs.push_back(*u.audio);
    return xs;
  };
  return train_ser(inputs(train_specs), labels_of(train_specs), inputs(val_specs), labels_of(val_specs), ser_cfg,
                   cfg, log);
}

/// Joint regime: fine-tunes a copy of `pretrained` together with a fresh
/// classifier under weight_sisnr * SiSNR + weight_ce * CE, one backward pass
/// per example through both models.
inline std::pair<Tse, Ser> train_ft(const Tse& pretrained, const std::vector<MixtureSpec>& train_specs,
                                    const std::vector<MixtureSpec>& val_specs, const ser::SerConfig& ser_cfg,
                                    const TrainConfig& cfg, TrainLog* log = nullptr) {
  cfg.validate();
  CSER_CHECK(!train_specs.empty(), "train_ft: no mixtures");
  Tse tse(pretrained);
  Ser ser(ser_cfg, derive_seed(cfg.seed, {0x5E}));
  const auto train = realize_all(train_specs);
  const auto val = realize_all(val_specs);
  for (const auto& ex : train) CSER_CHECK(ex.label >= 0, "train_ft: unlabeled target");
  for (const auto& ex : val) CSER_CHECK(ex.label >= 0, "train_ft: unlabeled target");

  ad::Adam<float> opt;
  opt.add(tse.params().all(), cfg.lr);
  opt.add(ser.params().all(), cfg.lr_ser);
  EarlyStopper<Tse, Ser> stopper(cfg.patience);
  TrainLog local;
  TrainLog& lg = log ? *log : local;
  lg.stage = std::string(to_string(Stage::ft));
  lg.weight_sisnr = cfg.weight_sisnr;
  lg.weight_ce = cfg.weight_ce;
  Rng rng(derive_seed(cfg.seed, {0xF7}));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const float ws = static_cast<float>(cfg.weight_sisnr), wc = static_cast<float>(cfg.weight_ce);

  struct Losses {
    ad::Tensor<float> sisnr, ce;
  };
  auto losses = [&](const TseExample& ex) {
    auto est = tse.extract(to_tensor(ex.mixture.samples), to_tensor(ex.enrollment.samples));
    auto l_s = ad::sisnr_loss(est, std::span<const double>(ex.target.samples));
    auto logits = ad::reshape(ser.classify(est), {1, ser::kNumClasses});
    auto l_c = ad::cross_entropy(logits, std::span<const int>(&ex.label, 1));
    return Losses{l_s, l_c};
  };
  auto total_of = [&](double s, double c) { return cfg.weight_sisnr * s + cfg.weight_ce * c; };

  long step = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size() && !stop; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      const float inv = 1.0f / static_cast<float>(b1 - b0);
      double s_sum = 0.0, c_sum = 0.0;
      for (std::size_t i = b0; i < b1; ++i) {
        auto [l_s, l_c] = losses(train[order[i]]);
        auto total = ad::add(ad::scale(l_s, ws), ad::scale(l_c, wc));
        total.backward(inv);
        s_sum += l_s.item();
        c_sum += l_c.item();
      }
      ad::clip_grad_norm(tse.params().all(), cfg.clip_norm);
      ad::clip_grad_norm(ser.params().all(), cfg.clip_norm);
      opt.step();
      opt.zero_grad();
      const double n = static_cast<double>(b1 - b0);
      const StepRecord rec{++step, epoch, s_sum / n, c_sum / n, total_of(s_sum / n, c_sum / n)};
      CSER_CHECK(std::isfinite(rec.total), "train_ft: non-finite loss at step ", step);
      lg.steps.push_back(rec);
      epoch_loss += rec.total * n;
      if (cfg.max_steps && step >= cfg.max_steps) stop = true;
    }
    epoch_loss /= static_cast<double>(train.size());
    double val_loss = epoch_loss;
    if (!val.empty()) {
      val_loss = 0.0;
      for (const auto& ex : val) {
        auto [l_s, l_c] = losses(ex);
        val_loss += total_of(l_s.item(), l_c.item());
      }
      val_loss /= static_cast<double>(val.size());
    }
    lg.epochs.push_back({epoch, epoch_loss, val_loss});
    spdlog::debug("ft epoch {} train {:.4f} val {:.4f}", epoch, epoch_loss, val_loss);
    if (!std::isfinite(val_loss)) detail::fail("train_ft: non-finite loss at epoch ", epoch);
    if (!val.empty() && stopper.update(epoch, val_loss, tse, ser)) stop = true;
  }
  if (!val.empty()) {
    stopper.restore(tse, ser);
    lg.best_epoch = stopper.best_epoch();
  } else {
    lg.best_epoch = lg.epochs.back().epoch;
  }
  return {std::move(tse), std::move(ser)};
}

// ---------------------------------------------------------------------------
// Cross-validation

enum class Method { clean, noisy, base, ft };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::clean: return "clean";
    case Method::noisy: return "noisy";
    case Method::base: return "TSE-SER-base";
    case Method::ft: return "TSE-SER-ft";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "clean") return Method::clean;
  if (s == "noisy") return Method::noisy;
  if (s == "base" || s == "TSE-SER-base") return Method::base;
  if (s == "ft" || s == "TSE-SER-ft") return Method::ft;
  detail::fail("unknown method '", s, "' (expected clean|noisy|base|ft)");
}

struct CvConfig {
  ser::SerConfig ser;
  TrainConfig ser_train = default_train_config(Stage::base);  // clean, noisy and base classifiers
  TrainConfig ft = default_train_config(Stage::ft);
  PairOptions pairing;
  GenderState gender_state = GenderState::unconstrained;
  std::uint64_t seed = 1;
  int jobs = 1;
};

/// Per-fold artifacts handed to an observer (e.g. to write checkpoints).
struct FoldArtifacts {
  int fold = 0;
  const Ser* ser = nullptr;
  const Tse* tse = nullptr;  // fine-tuned extractor for ft, else null
  const TrainLog* log = nullptr;
};
using FoldObserver = std::function<void(const FoldArtifacts&)>;

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads; rethrows the first
/// failure after all workers finish.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::clamp(jobs, 1, std::max(1, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Leave-one-session-out CV of one method. Returns one pooled report per test
/// condition (clean: clean and noisy tests; noisy: noisy; base/ft: denoised),
/// each holding its per-fold reports. Mixtures are paired once over the whole
/// corpus; fold f trains with seed derive(seed, f).
inline std::vector<MetricsReport> run_cv(const CorpusManifest& emotional, const CorpusManifest& noise_pool,
                                         Method method, const CvConfig& cfg, const Tse* pretrained = nullptr,
                                         const FoldObserver& observer = {}) {
  if (method == Method::base || method == Method::ft)
    CSER_CHECK(pretrained != nullptr, "run_cv: ", to_string(method),
               " needs a pretrained extractor (stage 1 must run first)");
  const FoldPlan plan = make_folds(emotional);
  const auto specs = pair_mixtures(emotional, noise_pool, cfg.gender_state, cfg.seed, cfg.pairing);
  const int n_folds = static_cast<int>(plan.folds.size());
  const std::string gs(to_string(cfg.gender_state));

  std::vector<InputCondition> tests;
  std::string train_set;
  switch (method) {
    case Method::clean: tests = {InputCondition::clean, InputCondition::noisy}; train_set = "clean"; break;
    case Method::noisy: tests = {InputCondition::noisy}; train_set = "noisy"; break;
    case Method::base:
    case Method::ft: tests = {InputCondition::denoised}; train_set = "denoised"; break;
  }

  std::vector<std::vector<MetricsReport>> per_fold(n_folds);
  parallel_for(n_folds, cfg.jobs, [&](int f) {
    const auto& fold = plan.folds[f];
    const auto fold_specs = specs_in_sessions(specs, fold.train_sessions);
    const auto test_specs = specs_in_sessions(specs, fold.test_sessions);
    const std::uint64_t fseed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(f)});
    auto [tr_idx, val_idx] = split_validation(fold_specs.size(), cfg.ser_train.val_fraction, derive_seed(fseed, {1}));
    const auto tr = pick(fold_specs, tr_idx);
    const auto val = pick(fold_specs, val_idx);

    TrainLog log;
    std::optional<Ser> ser;
    std::optional<Tse> ft_tse;
    TrainConfig sc = cfg.ser_train;
    sc.seed = fseed;
    switch (method) {
      case Method::clean:
      case Method::noisy: {
        const auto cond = method == Method::clean ? InputCondition::clean : InputCondition::noisy;
        log.stage = train_set;
        ser.emplace(train_ser(inputs_of(tr, cond), labels_of(tr), inputs_of(val, cond), labels_of(val), cfg.ser, sc,
                              &log));
        break;
      }
      case Method::base: ser.emplace(train_base(*pretrained, tr, val, cfg.ser, sc, &log)); break;
      case Method::ft: {
        TrainConfig fc = cfg.ft;
        fc.seed = fseed;
        auto [t, s] = train_ft(*pretrained, tr, val, cfg.ser, fc, &log);
        ft_tse.emplace(std::move(t));
        ser.emplace(std::move(s));
        break;
      }
    }
    const Tse* test_tse = method == Method::ft ? &*ft_tse : pretrained;
    for (auto cond : tests) {
      MetricsReport r = evaluate(*ser, test_tse, test_specs, cond,
                                 {std::string(to_string(method)), train_set, std::string(to_string(cond)), gs});
      r.fold = f;
      per_fold[f].push_back(std::move(r));
    }
    if (observer) observer({f, &*ser, ft_tse ? &*ft_tse : nullptr, &log});
    spdlog::info("{} fold {}/{}: UA {:.2f}", to_string(method), f + 1, n_folds, per_fold[f].front().ua);
  });

  std::vector<MetricsReport> pooled;
  for (std::size_t t = 0; t < tests.size(); ++t) {
    std::vector<MetricsReport> folds;
    for (int f = 0; f < n_folds; ++f) folds.push_back(per_fold[f][t]);
    pooled.push_back(pool_reports(std::move(folds)));
  }
  return pooled;
}

}  // namespace cocktailser::train
