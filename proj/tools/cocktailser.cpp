// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// cocktailser: synth, mix, pretrain, train-base, train-ft, eval,
// gender-study and gradcheck commands over run directories of the form
//   runs/<name>/{config.snapshot, checkpoints/, logs/, reports/}

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "cocktailser/config.hpp"
#include "cocktailser/gradsuite.hpp"
#include "cocktailser/runtime.hpp"
#include "cocktailser/study.hpp"

namespace fs = std::filesystem;
using namespace cocktailser;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
  bool overwrite = false;
};

struct Inputs {
  std::string manifest, pool, specs, pretrained;
};

RunConfig resolve(const Common& c) {
  std::vector<std::string> ov = c.overrides;
  if (c.seed) ov.push_back("seed=" + std::to_string(*c.seed));
  if (c.jobs) ov.push_back("jobs=" + std::to_string(*c.jobs));
  return load_run_config(c.config, ov);
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("cocktailser");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("COCKTAILSER_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else detail::fail("COCKTAILSER_LOG must be error|info|debug, got '", level, "'");
}

void require_out(const Common& c) { CSER_CHECK(!c.out.empty(), "--out is required"); }

/// Refuses to replace an existing artifact unless --overwrite was given.
fs::path fresh(const fs::path& p, const Common& c) {
  CSER_CHECK(c.overwrite || !fs::exists(p), p.string(), " already exists (pass --overwrite to replace it)");
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

/// Creates the run directory skeleton and snapshots the resolved config.
fs::path open_run(const Common& c, const RunConfig& cfg) {
  require_out(c);
  const fs::path run(c.out);
  for (const char* sub : {"checkpoints", "logs", "reports"}) fs::create_directories(run / sub);
  RunConfig copy = cfg;
  ad::write_file((run / "config.snapshot").string(), ConfigSchema(copy).snapshot());
  return run;
}

struct Corpora {
  CorpusManifest emotional, pool;
};

Corpora load_corpora(const Inputs& in) {
  CSER_CHECK(!in.manifest.empty(), "--manifest is required");
  Corpora c;
  c.emotional = read_manifest(in.manifest);
  c.pool = in.pool.empty() || in.pool == in.manifest ? c.emotional : read_manifest(in.pool);
  return c;
}

std::vector<MixtureSpec> load_specs(const Inputs& in, const Corpora& c) {
  CSER_CHECK(!in.specs.empty(), "--specs is required");
  return read_specs(in.specs, c.emotional, c.pool);
}

train::Tse load_tse(const RunConfig& cfg, const fs::path& path, const char* stage_hint) {
  CSER_CHECK(fs::exists(path), "stage 1 checkpoint ", path.string(), " not found: run 'pretrain' before ", stage_hint,
             " (stage ordering: pretrain -> ", stage_hint, ")");
  train::Tse tse(cfg.tse, 1);
  tse.load(path.string());
  return tse;
}

fs::path pretrained_path(const Inputs& in, const fs::path& run) {
  return in.pretrained.empty() ? run / "checkpoints" / "tse_pretrain.ckpt" : fs::path(in.pretrained);
}

void write_reports(const fs::path& dir, const std::string& stem, const std::vector<MetricsReport>& reports,
                   const Common& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : reports) j.push_back(to_json(r, true));
  ad::write_file(fresh(dir / (stem + ".json"), c).string(), j.dump(2) + "\n");
  const std::string table = format_table(reports);
  ad::write_file(fresh(dir / (stem + ".txt"), c).string(), table);
  std::cout << table;
}

std::pair<std::vector<MixtureSpec>, std::vector<MixtureSpec>> split_specs(const std::vector<MixtureSpec>& specs,
                                                                          const train::TrainConfig& t,
                                                                          std::uint64_t seed) {
  auto [tr, val] = train::split_validation(specs.size(), t.val_fraction, derive_seed(seed, {1}));
  return {train::pick(specs, tr), train::pick(specs, val)};
}

// ---------------------------------------------------------------------------

void cmd_synth(const Common& c) {
  const RunConfig cfg = resolve(c);
  require_out(c);
  const fs::path out(c.out);
  const fs::path manifest = fresh(out / "manifest.jsonl", c);
  if (c.overwrite) fs::remove_all(out / "wav");
  const auto corpus = synth_corpus(cfg.synth, cfg.seed);
  write_manifest(corpus, manifest, out / "wav");
  RunConfig copy = cfg;
  ad::write_file((out / "config.snapshot").string(), ConfigSchema(copy).snapshot());
  spdlog::info("synth: {} utterances in {} sessions -> {}", corpus.utterances.size(), corpus.sessions.size(),
               manifest.string());
}

void cmd_mix(const Common& c, const Inputs& in, const std::string& gender_state) {
  RunConfig cfg = resolve(c);
  if (!gender_state.empty()) cfg.gender_state = parse_gender_state(gender_state);
  require_out(c);
  const auto corpora = load_corpora(in);
  const auto specs = pair_mixtures(corpora.emotional, corpora.pool, cfg.gender_state, cfg.seed, cfg.pairing);
  write_specs(specs, fresh(c.out, c));
  spdlog::info("mix: {} mixtures (gender_state={}) -> {}", specs.size(), to_string(cfg.gender_state), c.out);
}

void cmd_pretrain(const Common& c, const Inputs& in) {
  RunConfig cfg = resolve(c);
  const fs::path run = open_run(c, cfg);
  const fs::path ckpt = fresh(run / "checkpoints" / "tse_pretrain.ckpt", c);
  const auto corpora = load_corpora(in);
  const auto specs = load_specs(in, corpora);
  cfg.pretrain.seed = cfg.seed;
  train::TrainLog log;
  const auto tse = train::pretrain_tse(specs, cfg.tse, cfg.pretrain, &log);
  tse.save(ckpt.string());
  ad::write_file(fresh(run / "logs" / "pretrain.jsonl", c).string(), log.to_jsonl());
  spdlog::info("pretrain: best epoch {} -> {}", log.best_epoch, ckpt.string());
}

void cmd_train_base(const Common& c, const Inputs& in) {
  RunConfig cfg = resolve(c);
  const fs::path run = open_run(c, cfg);
  const auto tse = load_tse(cfg, pretrained_path(in, run), "train-base");
  const fs::path ckpt = fresh(run / "checkpoints" / "ser_base.ckpt", c);
  const auto corpora = load_corpora(in);
  const auto [tr, val] = split_specs(load_specs(in, corpora), cfg.base, cfg.seed);
  cfg.base.seed = cfg.seed;
  train::TrainLog log;
  const auto ser = train::train_base(tse, tr, val, cfg.ser, cfg.base, &log);
  ser.save(ckpt.string());
  ad::write_file(fresh(run / "logs" / "base.jsonl", c).string(), log.to_jsonl());
  spdlog::info("train-base: best epoch {} -> {}", log.best_epoch, ckpt.string());
}

void cmd_train_ft(const Common& c, const Inputs& in) {
  RunConfig cfg = resolve(c);
  const fs::path run = open_run(c, cfg);
  const auto pre = load_tse(cfg, pretrained_path(in, run), "train-ft");
  const fs::path tse_ckpt = fresh(run / "checkpoints" / "tse_ft.ckpt", c);
  const fs::path ser_ckpt = fresh(run / "checkpoints" / "ser_ft.ckpt", c);
  const auto corpora = load_corpora(in);
  const auto [tr, val] = split_specs(load_specs(in, corpora), cfg.ft, cfg.seed);
  cfg.ft.seed = cfg.seed;
  train::TrainLog log;
  const auto [tse, ser] = train::train_ft(pre, tr, val, cfg.ser, cfg.ft, &log);
  tse.save(tse_ckpt.string());
  ser.save(ser_ckpt.string());
  ad::write_file(fresh(run / "logs" / "ft.jsonl", c).string(), log.to_jsonl());
  spdlog::info("train-ft: best epoch {} -> {}, {}", log.best_epoch, tse_ckpt.string(), ser_ckpt.string());
}

struct EvalArgs {
  std::string ser, tse, condition = "noisy", method, cv;
};

void cmd_eval(const Common& c, const Inputs& in, const EvalArgs& e) {
  const RunConfig cfg = resolve(c);
  const fs::path run = open_run(c, cfg);
  const auto corpora = load_corpora(in);
  if (!e.cv.empty()) {
    // Leave-one-session-out CV of each listed method.
    std::vector<MetricsReport> reports;
    std::optional<train::Tse> pre;
    std::size_t start = 0;
    while (start <= e.cv.size()) {
      const auto end = std::min(e.cv.find(',', start), e.cv.size());
      const auto method = train::parse_method(e.cv.substr(start, end - start));
      start = end + 1;
      if ((method == train::Method::base || method == train::Method::ft) && !pre)
        pre.emplace(load_tse(cfg, pretrained_path(in, run), "eval --cv base/ft"));
      for (auto& r : train::run_cv(corpora.emotional, corpora.pool, method, cfg.cv(), pre ? &*pre : nullptr))
        reports.push_back(std::move(r));
    }
    write_reports(run / "reports", "cv", reports, c);
    return;
  }
  CSER_CHECK(!e.ser.empty(), "eval needs --ser <checkpoint> or --cv <methods>");
  const auto specs = load_specs(in, corpora);
  train::Ser ser(cfg.ser, 1);
  ser.load(e.ser);
  InputCondition cond = InputCondition::noisy;
  if (e.condition == "clean") cond = InputCondition::clean;
  else if (e.condition == "denoised") cond = InputCondition::denoised;
  else CSER_CHECK(e.condition == "noisy", "unknown --condition '", e.condition, "' (expected clean|noisy|denoised)");
  std::optional<train::Tse> tse;
  if (cond == InputCondition::denoised) {
    CSER_CHECK(!e.tse.empty(), "--condition denoised needs --tse <checkpoint>");
    tse.emplace(cfg.tse, 1);
    tse->load(e.tse);
  }
  const std::string gs = specs.empty() ? "" : std::string(to_string(specs.front().gender_state));
  const auto report = evaluate(ser, tse ? &*tse : nullptr, specs, cond,
                               {e.method.empty() ? fs::path(e.ser).stem().string() : e.method, "", "", gs});
  write_reports(run / "reports", "eval", {report}, c);
}

void cmd_gender_study(const Common& c, const Inputs& in) {
  const RunConfig cfg = resolve(c);
  const fs::path run = open_run(c, cfg);
  const auto tse = load_tse(cfg, pretrained_path(in, run), "gender-study");
  const auto corpora = load_corpora(in);
  write_reports(run / "reports", "gender_study", train::gender_study(corpora.emotional, corpora.pool, tse, cfg.cv()), c);
}

int cmd_gradcheck(const Common& c, int trials) {
  const RunConfig cfg = resolve(c);
  const auto entries = run_gradient_suite(trials, cfg.seed);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  bool ok = true;
  for (const auto& e : entries) {
    const bool pass = e.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-26s trials %3d  max rel err %.3e  %s\n", e.name.c_str(), e.trials, e.max_rel_error,
                pass ? "ok" : "FAIL");
    j.push_back({{"name", e.name}, {"trials", e.trials}, {"max_rel_error", e.max_rel_error}, {"passed", pass}});
  }
  if (!c.out.empty()) {
    const fs::path run = open_run(c, cfg);
    ad::write_file(fresh(run / "reports" / "gradcheck.json", c).string(), j.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Target speaker extraction + speech emotion recognition toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "Config file of dotted key = value lines");
  app.add_option("--set", common.overrides, "Override a config key (key=value), repeatable");
  app.add_option("--seed", common.seed, "Seed (overrides the config)");
  app.add_option("--jobs", common.jobs, "Worker cap (overrides the config)");
  app.add_option("--out", common.out, "Output directory or file");
  app.add_flag("--overwrite", common.overwrite, "Replace existing artifacts");

  Inputs in;
  auto add_inputs = [&](CLI::App* s, bool specs) {
    s->add_option("--manifest", in.manifest, "Emotional corpus manifest (JSONL)");
    s->add_option("--pool", in.pool, "Interferer pool manifest (defaults to --manifest)");
    if (specs) s->add_option("--specs", in.specs, "Mixture spec file (JSONL)");
  };
  auto add_pretrained = [&](CLI::App* s) {
    s->add_option("--pretrained", in.pretrained, "Stage-1 checkpoint (default <out>/checkpoints/tse_pretrain.ckpt)");
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  auto* mix = app.add_subcommand("mix", "Pair mixtures into a spec file");
  std::string gender_state;
  add_inputs(mix, false);
  mix->add_option("--gender-state", gender_state, "same|different|unconstrained (overrides mix.gender_state)");
  auto* pretrain = app.add_subcommand("pretrain", "Stage 1: pretrain the extractor");
  add_inputs(pretrain, true);
  auto* base = app.add_subcommand("train-base", "Stage 2: frozen extractor, classifier on denoised audio");
  add_inputs(base, true);
  add_pretrained(base);
  auto* ft = app.add_subcommand("train-ft", "Stage 2: joint fine-tuning");
  add_inputs(ft, true);
  add_pretrained(ft);
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints or run cross-validation");
  EvalArgs ea;
  add_inputs(eval, true);
  add_pretrained(eval);
  eval->add_option("--ser", ea.ser, "Classifier checkpoint");
  eval->add_option("--tse", ea.tse, "Extractor checkpoint (denoised condition)");
  eval->add_option("--condition", ea.condition, "clean|noisy|denoised");
  eval->add_option("--method", ea.method, "Method tag for the report");
  eval->add_option("--cv", ea.cv, "Comma list of methods for leave-one-session-out CV (clean,noisy,base,ft)");
  auto* study = app.add_subcommand("gender-study", "Same/different-gender train x test grid");
  add_inputs(study, false);
  add_pretrained(study);
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  int trials = 20;
  grad->add_option("--trials", trials, "Random trials per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    setup_logging();
    if (*synth) cmd_synth(common);
    else if (*mix) cmd_mix(common, in, gender_state);
    else if (*pretrain) cmd_pretrain(common, in);
    else if (*base) cmd_train_base(common, in);
    else if (*ft) cmd_train_ft(common, in);
    else if (*eval) cmd_eval(common, in, ea);
    else if (*study) cmd_gender_study(common, in);
    else if (*grad) return cmd_gradcheck(common, trials);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
