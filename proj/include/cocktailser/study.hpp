// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "cocktailser/trainer.hpp"

namespace cocktailser::train {

/// Train-state x test-state grid over same/different-gender mixtures.
///
/// For each training state the noisy baseline and TSE-SER-base are trained per
/// fold and tested on both states; the clean baseline is trained once per fold.
/// Denoised reports carry the extractor's SI-SDR/SI-SDRi for the test state.
/// Result order: clean, then noisy (4 cells), then base (4 cells), each grid
/// row-major in (train state, test state).
inline std::vector<MetricsReport> gender_study(const CorpusManifest& emotional, const CorpusManifest& noise_pool,
                                               const Tse& pretrained, const CvConfig& cfg) {
  const std::array<GenderState, 2> states = {GenderState::same, GenderState::different};
  std::array<std::vector<MixtureSpec>, 2> specs;
  for (int s = 0; s < 2; ++s) specs[s] = pair_mixtures(emotional, noise_pool, states[s], cfg.seed, cfg.pairing);
  const FoldPlan plan = make_folds(emotional);
  const int n_folds = static_cast<int>(plan.folds.size());

  auto label = [](const char* set, GenderState s) {
    std::string st(to_string(s));
    st[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(st[0])));
    return std::string(set) + " (" + st + ")";
  };

  // cells[c][f]: c = 0 clean, 1..4 noisy grid, 5..8 base grid.
  std::vector<std::vector<MetricsReport>> cells(9, std::vector<MetricsReport>(n_folds));
  parallel_for(n_folds, cfg.jobs, [&](int f) {
    const auto& fold = plan.folds[f];
    const std::uint64_t fseed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(f)});
    TrainConfig sc = cfg.ser_train;
    sc.seed = fseed;
    std::array<std::vector<MixtureSpec>, 2> test;
    for (int s = 0; s < 2; ++s) test[s] = specs_in_sessions(specs[s], fold.test_sessions);

    {
      const auto train = specs_in_sessions(specs[0], fold.train_sessions);
      auto [tr, val] = split_validation(train.size(), sc.val_fraction, derive_seed(fseed, {1}));
      const auto ser = train_ser(inputs_of(pick(train, tr), InputCondition::clean), labels_of(pick(train, tr)),
                                 inputs_of(pick(train, val), InputCondition::clean), labels_of(pick(train, val)),
                                 cfg.ser, sc);
      auto r = evaluate(ser, static_cast<const Tse*>(nullptr), test[0], InputCondition::clean,
                        {std::string(to_string(Method::clean)), "Clean", "Clean", "-"});
      r.fold = f;
      cells[0][f] = std::move(r);
    }
    for (int s = 0; s < 2; ++s) {
      const auto train = specs_in_sessions(specs[s], fold.train_sessions);
      auto [tr_idx, val_idx] = split_validation(train.size(), sc.val_fraction, derive_seed(fseed, {1}));
      const auto tr = pick(train, tr_idx);
      const auto val = pick(train, val_idx);
      const auto noisy = train_ser(inputs_of(tr, InputCondition::noisy), labels_of(tr),
                                   inputs_of(val, InputCondition::noisy), labels_of(val), cfg.ser, sc);
      const auto base = train_base(pretrained, tr, val, cfg.ser, sc);
      for (int t = 0; t < 2; ++t) {
        const std::string gs(to_string(states[t]));
        auto rn = evaluate(noisy, static_cast<const Tse*>(nullptr), test[t], InputCondition::noisy,
                           {std::string(to_string(Method::noisy)), label("Noisy", states[s]), label("Noisy", states[t]), gs});
        auto rb = evaluate(base, &pretrained, test[t], InputCondition::denoised,
                           {std::string(to_string(Method::base)), label("Denoised", states[s]),
                            label("Denoised", states[t]), gs});
        rn.fold = rb.fold = f;
        cells[1 + s * 2 + t][f] = std::move(rn);
        cells[5 + s * 2 + t][f] = std::move(rb);
      }
    }
    spdlog::info("gender study fold {}/{} done", f + 1, n_folds);
  });

  std::vector<MetricsReport> out;
  for (auto& c : cells) out.push_back(pool_reports(std::move(c)));
  return out;
}

}  // namespace cocktailser::train
