// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// cfcredit command-line tool: gen, warmstart, train, analyze.

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>

#include "cfcredit.h"

namespace {

struct ConfigDeleter {
  void operator()(cfc_config* c) const { cfc_config_free(c); }
};
using ConfigPtr = std::unique_ptr<cfc_config, ConfigDeleter>;

int report(cfc_status status) {
  if (status != CFC_OK)
    std::fprintf(stderr, "cfcredit: %s: %s\n", cfc_status_name(status), cfc_last_error());
  return static_cast<int>(status);
}

// Loads the config file (if any) and applies key=value overrides in order.
cfc_status load_config(const std::string& path, const std::vector<std::string>& sets,
                       ConfigPtr& out) {
  cfc_config* raw = nullptr;
  cfc_status s = cfc_config_create(path.empty() ? nullptr : path.c_str(), &raw);
  if (s != CFC_OK) return s;
  out.reset(raw);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "cfcredit: --set expects key=value, got '%s'\n", kv.c_str());
      return CFC_ERR_INVALID_ARGUMENT;
    }
    s = cfc_config_set(out.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != CFC_OK) return s;
  }
  return CFC_OK;
}

cfc_status set_number(cfc_config* c, const char* key, unsigned long long v) {
  return cfc_config_set(c, key, std::to_string(v).c_str());
}

std::string joined_args(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += argv[i];
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* level = std::getenv("CFCREDIT_LOG")) {
    if (cfc_set_log_level(level) != CFC_OK)
      std::fprintf(stderr, "cfcredit: ignoring CFCREDIT_LOG: %s\n", cfc_last_error());
  }

  CLI::App app{"Counterfactual token weighting for group policy-gradient training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cfc_version()) + " (" + cfc_source_hash() + ")");

  std::string config_path;
  std::vector<std::string> sets;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "Override a configuration value (key=value, repeatable)");
  };

  auto* gen = app.add_subcommand("gen", "Write a synthetic problem corpus as JSON lines");
  std::string gen_out;
  unsigned long long gen_n = 0, gen_seed = 0;
  int min_steps = 0, max_steps = 0;
  bool force = false;
  add_config(gen);
  gen->add_option("-o,--out", gen_out, "Output JSONL path")->required();
  auto* n_opt = gen->add_option("-n,--n", gen_n, "Number of problems (default: data.train_size)");
  auto* seed_opt = gen->add_option("--seed", gen_seed, "Root seed (default: config seed)");
  auto* min_opt = gen->add_option("--min-steps", min_steps, "Fewest arithmetic steps");
  auto* max_opt = gen->add_option("--max-steps", max_steps, "Most arithmetic steps");
  gen->add_flag("-f,--force", force, "Overwrite an existing file");

  auto* warm = app.add_subcommand("warmstart", "Supervised warm start of the policy");
  std::string data_path, checkpoint_path;
  unsigned workers = 0;
  add_config(warm);
  warm->add_option("-d,--data", data_path, "Training corpus (JSONL)")->required()->check(CLI::ExistingFile);
  warm->add_option("-o,--out", checkpoint_path, "Checkpoint to write")->required();
  warm->add_option("-w,--workers", workers, "Worker threads");
  warm->add_flag("-f,--force", force, "Overwrite an existing checkpoint");

  auto* train = app.add_subcommand("train", "Run RL arms for each weighting mode and seed");
  std::string out_dir, modes, seeds;
  unsigned long long steps = 0;
  bool resume = false;
  add_config(train);
  train->add_option("-d,--data", data_path, "Training corpus (JSONL)")->required()->check(CLI::ExistingFile);
  train->add_option("-m,--checkpoint", checkpoint_path, "Warm-start checkpoint")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", out_dir, "Output directory")->required();
  train->add_option("--modes", modes, "Weighting modes, e.g. cf,uniform,inverted,random");
  train->add_option("--seeds", seeds, "Seeds, e.g. 1,2,3");
  auto* steps_opt = train->add_option("--steps", steps, "RL steps per arm (0: evaluation only)");
  train->add_option("-w,--workers", workers, "Worker threads");
  train->add_flag("--resume", resume, "Continue from existing arm checkpoints");
  train->add_flag("-f,--force", force, "Overwrite a previous run in the output directory");

  auto* analyze = app.add_subcommand("analyze", "Statistics over span and weight logs");
  std::string spans_path, weights_path;
  cfc_analyze_options aopt;
  cfc_analyze_options_default(&aopt);
  bool quantile = false;
  analyze->add_option("--spans", spans_path, "Span log (JSONL)")->required()->check(CLI::ExistingFile);
  analyze->add_option("--weights", weights_path, "Weight log (JSONL)")->required()->check(CLI::ExistingFile);
  analyze->add_option("-o,--out", out_dir, "Output directory")->required();
  analyze->add_flag("--quantile-bins", quantile, "Place drop-bin cuts at quantiles");
  analyze->add_option("--w-min", aopt.w_min, "Smallest span weight");
  analyze->add_option("--w-max", aopt.w_max, "Largest span weight");
  analyze->add_option("--top", aopt.top_distractors, "Distractor spans listed");
  analyze->add_option("--limit", aopt.qualitative_limit, "Completions in the qualitative table");
  analyze->add_flag("-f,--force", force, "Overwrite existing reports");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    ConfigPtr cfg;
    if (cfc_status s = load_config(config_path, sets, cfg); s != CFC_OK) return report(s);
    auto fill = [&](CLI::Option* opt, const char* key, auto& target) {
      if (opt->count() > 0) return CFC_OK;
      int64_t v = 0;
      const cfc_status s = cfc_config_get_int(cfg.get(), key, &v);
      target = static_cast<std::remove_reference_t<decltype(target)>>(v);
      return s;
    };
    for (cfc_status s : {fill(n_opt, "data.train_size", gen_n), fill(seed_opt, "seed", gen_seed),
                         fill(min_opt, "data.min_steps", min_steps),
                         fill(max_opt, "data.max_steps", max_steps)})
      if (s != CFC_OK) return report(s);
    const cfc_status s =
        cfc_generate_dataset(gen_out.c_str(), gen_n, gen_seed, min_steps, max_steps, force);
    if (s == CFC_OK) std::printf("wrote %llu problems to %s\n", gen_n, gen_out.c_str());
    return report(s);
  }

  if (warm->parsed()) {
    ConfigPtr cfg;
    if (cfc_status s = load_config(config_path, sets, cfg); s != CFC_OK) return report(s);
    if (workers > 0)
      if (cfc_status s = set_number(cfg.get(), "train.workers", workers); s != CFC_OK)
        return report(s);
    cfc_warmstart_result r{};
    const cfc_status s =
        cfc_warmstart(cfg.get(), data_path.c_str(), checkpoint_path.c_str(), force, &r);
    if (s == CFC_OK || s == CFC_ERR_GATE)
      std::printf("held-out accuracy %.4f, final loss %.4f, %llu updates, %.1f s\n",
                  r.heldout_accuracy, r.final_loss,
                  static_cast<unsigned long long>(r.updates), r.seconds);
    return report(s);
  }

  if (train->parsed()) {
    ConfigPtr cfg;
    if (cfc_status s = load_config(config_path, sets, cfg); s != CFC_OK) return report(s);
    if (!modes.empty())
      if (cfc_status s = cfc_config_set_modes(cfg.get(), modes.c_str()); s != CFC_OK)
        return report(s);
    if (!seeds.empty())
      if (cfc_status s = cfc_config_set_seeds(cfg.get(), seeds.c_str()); s != CFC_OK)
        return report(s);
    if (steps_opt->count() > 0)
      if (cfc_status s = set_number(cfg.get(), "train.total_steps", steps); s != CFC_OK)
        return report(s);
    if (workers > 0)
      if (cfc_status s = set_number(cfg.get(), "train.workers", workers); s != CFC_OK)
        return report(s);
    const std::string command = joined_args(argc, argv);
    cfc_train_options opt{resume ? 1 : 0, force ? 1 : 0, command.c_str()};
    cfc_train_result r{};
    const cfc_status s = cfc_train(cfg.get(), data_path.c_str(), checkpoint_path.c_str(),
                                   out_dir.c_str(), &opt, &r);
    if (s == CFC_OK)
      std::printf("%llu arms in %.1f s; report in %s/report.json\n",
                  static_cast<unsigned long long>(r.arms), r.wall_seconds, out_dir.c_str());
    return report(s);
  }

  aopt.quantile_bins = quantile ? 1 : 0;
  aopt.force = force ? 1 : 0;
  const cfc_status s =
      cfc_analyze(spans_path.c_str(), weights_path.c_str(), out_dir.c_str(), &aopt);
  if (s == CFC_OK) std::printf("reports written to %s\n", out_dir.c_str());
  return report(s);
}
