// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS/FAIL line per criterion and a summary.
//
//   cfcredit_acceptance --config desk.json --cache DIR [--workers N]
//                       [--warmstart-problems N] [--warmstart-seed S]
//                       [--skip-experiment]
//
// The desk experiment caches its warm-start checkpoint and finished arms
// under DIR, keyed by the source hash and the configuration, so a rerun of
// unchanged code only recomputes the report.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cfcredit/analysis.hpp"
#include "cfcredit/checkpoint.hpp"
#include "cfcredit/config.hpp"
#include "cfcredit/corpus.hpp"
#include "cfcredit/counterfactual.hpp"
#include "cfcredit/error.hpp"
#include "cfcredit/experiment.hpp"
#include "cfcredit/rng.hpp"
#include "cfcredit/trainer.hpp"
#include "cfcredit/warmstart.hpp"

using namespace cfcredit;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool empirical = false;  // a measured experimental outcome rather than a correctness check
};

struct Row {
  std::string name;
  Outcome outcome;
  double seconds = 0.0;
};

[[gnu::format(printf, 1, 2)]] std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

ModelConfig random_model(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.zero_output_head = false;
  c.init_std = 0.1;
  return c;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(uniform_int(rng, 4, static_cast<std::int64_t>(vocab) - 1));
  return out;
}

// --- Loss equivalence -----------------------------------------------------

Outcome loss_equivalence() {
  Rng rng(101);
  double worst = 0.0;
  for (int batch = 0; batch < 100; ++batch) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 16));
    std::vector<std::vector<double>> lps(n), ws(n);
    std::vector<std::vector<TokenId>> toks(n);
    std::vector<LossTerm> terms;
    for (std::size_t i = 0; i < n; ++i) {
      const auto len = static_cast<std::size_t>(uniform_int(rng, 1, 64));
      for (std::size_t t = 0; t < len; ++t) {
        lps[i].push_back(-8.0 * uniform01(rng));
        toks[i].push_back(uniform01(rng) < 0.05 ? Tokenizer::kPad : 9);
      }
      ws[i].assign(len, 1.0);
    }
    const auto rewards = [&] {
      std::vector<double> r(n);
      for (auto& x : r) x = uniform01(rng) < 0.5 ? 1.0 : 0.0;
      return r;
    }();
    const auto adv = group_advantages(rewards, 1e-4);
    for (std::size_t i = 0; i < n; ++i) terms.push_back({lps[i], ws[i], toks[i], adv[i]});
    worst = std::max(worst, rel_err(weighted_loss(terms), vanilla_loss(terms)));
  }
  return {worst < 1e-12, fmt("100 batches, max relative error %.3g (< 1e-12)", worst)};
}

// --- Gradient correctness -------------------------------------------------

Outcome gradient_check() {
  const Tokenizer tok(TokenizerKind::kWord);
  Policy p(random_model(tok.vocab_size()), 202);
  Rng rng(203);
  const auto data = generate_dataset(4, 204);
  std::vector<std::vector<TokenId>> prompts, completions;
  std::vector<std::vector<double>> weights;
  for (const auto& e : data) {
    prompts.push_back(tok.tokenize(prompt_text(e.problem)).token_ids);
    auto ids = tok.tokenize(e.trace.reasoning_text + e.trace.answer_text).token_ids;
    ids.push_back(Tokenizer::kEos);
    completions.push_back(ids);
    std::vector<double> w(ids.size());
    for (auto& x : w) x = 0.5 + 3.5 * uniform01(rng);
    weights.push_back(w);
  }
  const std::vector<double> adv{1.2, -0.4, 0.0, -0.8};
  std::vector<PolicyLossItem> items;
  for (std::size_t i = 0; i < data.size(); ++i)
    items.push_back({prompts[i], completions[i], weights[i], adv[i]});

  const GradientResult g = policy_loss_gradient(p, items, 2, 1);
  const double value_err = rel_err(g.value, policy_loss(p, items));
  double worst = 0.0;
  const int coords = 128;
  for (int k = 0; k < coords; ++k) {
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(p.num_params()) - 1));
    auto params = p.mutable_params();
    const double orig = params[i];
    params[i] = orig + 1e-5;
    const double up = policy_loss(p, items);
    params[i] = orig - 1e-5;
    const double down = policy_loss(p, items);
    params[i] = orig;
    worst = std::max(worst, rel_err((up - down) / 2e-5, g.grad[i]));
  }
  return {worst < 1e-4 && value_err < 1e-12,
          fmt("%d coordinates of %zu, max relative error %.3g (< 1e-4)", coords, p.num_params(), worst)};
}

// --- Advantage oracle -----------------------------------------------------

Outcome advantage_oracle() {
  const std::vector<double> r{1, 0, 0, 0};
  const auto a = group_advantages(r, 1e-4);
  const double mean = 0.25;
  const double sd = std::sqrt((0.75 * 0.75 + 3 * 0.25 * 0.25) / 4.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < 4; ++i) worst = std::max(worst, std::abs(a[i] - (r[i] - mean) / (sd + 1e-4)));
  bool zeros = true;
  for (double v : {0.0, 1.0})
    for (std::size_t g : {2u, 4u, 8u, 16u})
      for (double x : group_advantages(std::vector<double>(g, v), 1e-4)) zeros &= x == 0.0;
  const bool reference = std::abs(a[0] - 1.7316) < 1e-4 && std::abs(a[1] + 0.5772) < 1e-4;
  return {worst < 1e-6 && zeros && reference,
          fmt("A = [%.4f, %.4f, ...], max deviation %.2g (< 1e-6), all-equal groups exactly zero: %s",
              a[0], a[1], worst, zeros ? "yes" : "no")};
}

// --- Complement identity --------------------------------------------------

Outcome complement_identity() {
  Rng rng(404);
  WeightConfig cf, inv;
  inv.mode = WeightMode::kInverted;
  const double sum = cf.w_min + cf.w_max;
  std::size_t tokens = 0, bad = 0;
  for (int c = 0; c < 1000; ++c) {
    const auto k = static_cast<std::size_t>(uniform_int(rng, 1, 10));
    std::vector<Span> spans;
    std::vector<double> imp;
    std::size_t at = 0;
    for (std::size_t i = 0; i < k; ++i) {
      at += static_cast<std::size_t>(uniform_int(rng, 0, 3));
      const auto len = static_cast<std::size_t>(uniform_int(rng, 1, 8));
      Span s;
      s.token_range = {at, at + len};
      spans.push_back(s);
      at += len;
      imp.push_back(uniform01(rng) * 1000.0 - 800.0);
    }
    TokenizedSequence seq;
    seq.token_ids.assign(at + 4, 9);
    seq.boundary = at + 1;
    const auto a = assign_weights(spans, imp, cf, seq);
    const auto b = assign_weights(spans, imp, inv, seq);
    if (a.normalized != b.normalized) ++bad;
    for (const auto& s : spans)
      for (std::size_t t = s.token_range.start; t < s.token_range.end; ++t) {
        ++tokens;
        bad += (a.weights[t] + b.weights[t]) != sum;
      }
  }
  return {bad == 0, fmt("1000 completions, %zu span tokens, %zu not bitwise equal to %.1f",
                        tokens, bad, sum)};
}

// --- Masking invariants ---------------------------------------------------

Outcome masking_invariants() {
  const Tokenizer tok(TokenizerKind::kWord);
  const Policy p(random_model(tok.vocab_size()), 505);
  std::size_t variants = 0, length_kept = 0, accounting_ok = 0, completions = 0;
  bool empty_zero = true;
  for (const auto& e : generate_dataset(100, 506)) {
    const Completion c = make_completion(tok, prompt_text(e.problem),
                                         e.trace.reasoning_text + e.trace.answer_text, true);
    const auto spans = detect_spans(c);
    for (std::size_t k = 0; k < spans.size(); ++k) {
      const auto m = mask_span(c.tokens, spans[k], static_cast<int>(k));
      ++variants;
      length_kept += m.token_ids.size() == c.tokens.size() && m.original_length == c.tokens.size();
    }
    Span empty;
    empty.token_range = {1, 1};
    empty_zero &= span_drop(p, c, empty).drop == 0.0;
    p.reset_stats();
    const auto est = estimate_completion(p, c, spans, WeightConfig{}, nullptr, false);
    ++completions;
    accounting_ok += est.forward_passes == spans.size() + 1 &&
                     p.stats().inference_passes == spans.size() + 1;
  }
  return {length_kept == variants && empty_zero && accounting_ok == completions,
          fmt("%zu/%zu variants keep their length; empty-span drop exactly 0: %s; "
              "|spans|+1 passes in %zu/%zu completions",
              length_kept, variants, empty_zero ? "yes" : "no", accounting_ok, completions)};
}

// --- Skip and cache -------------------------------------------------------

Outcome skip_and_cache() {
  const Tokenizer tok(TokenizerKind::kWord);
  ModelConfig uniform;
  uniform.vocab_size = tok.vocab_size();
  Policy p(uniform, 606);
  const auto data = generate_dataset(2, 607);
  std::vector<Problem> problems{data[0].problem, data[1].problem};
  TrainConfig cfg;
  cfg.group_size = 4;
  cfg.batch_size = 2;
  cfg.grad_accum = 1;
  cfg.sampler.max_new_tokens = 32;
  Adam adam(AdamConfig{}, p.num_params());
  WeightCache cache;
  const auto before = p.fingerprint();
  const auto r = train_step(p, adam, &cache, tok, step_batch(problems, cfg, 0), cfg, 0);
  const bool unchanged = p.fingerprint() == before && r.metrics.mean_reward == 0.0 &&
                         !r.metrics.updated && r.metrics.cf_passes == 0;

  const Completion c = make_completion(tok, prompt_text(data[0].problem),
                                       data[0].trace.reasoning_text + data[0].trace.answer_text, true);
  const auto spans = detect_spans(c);
  const Policy q(random_model(tok.vocab_size()), 608);
  WeightCache wc;
  const auto first = estimate_completion(q, c, spans, WeightConfig{}, &wc, false);
  q.reset_stats();
  const auto second = estimate_completion(q, c, spans, WeightConfig{}, &wc, false);
  const bool hit = !first.cache_hit && first.forward_passes == spans.size() + 1 &&
                   second.cache_hit && second.weights == first.weights &&
                   second.forward_passes == 0 && q.stats().inference_passes == 0;
  return {unchanged && hit,
          fmt("all-failed batch: parameter hash %s; cache hit: %s, %llu passes",
              unchanged ? "unchanged" : "CHANGED", hit ? "bit-identical weights" : "MISMATCH",
              static_cast<unsigned long long>(second.forward_passes))};
}

// --- Analysis oracles -----------------------------------------------------

Outcome analysis_oracles() {
  Rng rng(707);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(static_cast<std::size_t>(uniform_int(rng, 3, 400)));
    for (auto& v : x) v = -600.0 * std::pow(uniform01(rng), 2.0) + 40.0 * uniform01(rng);
    long double mean = 0;
    for (double v : x) mean += v;
    mean /= x.size();
    long double m2 = 0, m3 = 0, m4 = 0;
    for (double v : x) {
      const long double d = v - mean;
      m2 += d * d;
      m3 += d * d * d;
      m4 += d * d * d * d;
    }
    m2 /= x.size();
    m3 /= x.size();
    m4 /= x.size();
    const auto s = distribution_stats(x);
    worst = std::max({worst, rel_err(s.mean, static_cast<double>(mean)),
                      rel_err(s.std, static_cast<double>(std::sqrt(m2))),
                      rel_err(s.skewness, static_cast<double>(m3 / std::pow(m2, 1.5L))),
                      rel_err(s.excess_kurtosis, static_cast<double>(m4 / (m2 * m2) - 3.0L))});
  }

  std::vector<double> w(3000, 1.0), n(3000);
  for (auto& v : n) v = uniform01(rng);
  const auto conc = concentration(w, n);
  double ratio_dev = 0.0;
  for (const auto& t : conc.tiers) ratio_dev = std::max(ratio_dev, std::abs(t.ratio.value_or(0.0) - 1.0));

  std::vector<double> drops(5000);
  for (auto& d : drops) d = -900.0 * uniform01(rng) + 50.0;
  double pct = 0.0, qpct = 0.0;
  for (double v : bin_drops(drops).percent) pct += v;
  for (double v : bin_drops(drops, DropBins::quantile(drops)).percent) qpct += v;

  std::vector<PatternLabels> set(200);
  for (std::size_t i = 0; i < set.size(); ++i) {
    set[i].calc_chain = i % 3 == 0;
    set[i].mul_div = i % 5 == 0;
    set[i].conclusion = i % 7 == 0;
  }
  bool unit = true;
  for (std::size_t l = 0; l < kNumPatternLabels; ++l) {
    const auto e = enrichment(set, set, static_cast<PatternLabel>(l));
    if (e.critical_hits > 0) unit &= e.ratio && *e.ratio == 1.0;
  }
  const bool pass = worst < 1e-10 && ratio_dev < 1e-9 && std::abs(pct - 100.0) < 1e-9 &&
                    std::abs(qpct - 100.0) < 1e-9 && unit;
  return {pass, fmt("moments max relative error %.2g (< 1e-10); uniform-weight tier ratios within "
                    "%.2g of 1; bin percentages sum to %.12g and %.12g; enrichment(S,S) = 1: %s",
                    worst, ratio_dev, pct, qpct, unit ? "yes" : "no")};
}

// --- Desk experiment ------------------------------------------------------

struct Desk {
  ExperimentConfig cfg;
  std::size_t warmstart_problems = 0;
  std::uint64_t warmstart_data_seed = 0;
};

Desk load_desk(const fs::path& path, std::size_t warmstart_problems,
               std::uint64_t warmstart_data_seed) {
  Desk d;
  d.cfg = load_experiment_config(path);
  d.cfg.validate();
  d.warmstart_problems = warmstart_problems;
  d.warmstart_data_seed = warmstart_data_seed;
  return d;
}

struct DeskResult {
  double warm_accuracy = 0.0;
  double warm_seconds = 0.0;
  ExperimentReport report;
  double experiment_seconds = 0.0;
  bool fresh = true;
  fs::path run_dir;
};

std::string short_hash(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return buf;
}

DeskResult run_desk(const Desk& d, const fs::path& cache, std::size_t workers) {
  const ExperimentConfig& c = d.cfg;
  const std::string key = short_hash(source_hash() + to_json(c).dump() +
                                     std::to_string(d.warmstart_problems) + ":" +
                                     std::to_string(d.warmstart_data_seed));
  const fs::path dir = cache / ("desk_" + key);
  fs::create_directories(dir);
  DeskResult out;
  out.run_dir = dir;

  const Tokenizer tok(c.tokenizer);
  const auto warm_data =
      generate_dataset(d.warmstart_problems, d.warmstart_data_seed, c.data.min_steps, c.data.max_steps);
  const auto train_data = generate_dataset(c.data.train_size, c.seed, c.data.min_steps, c.data.max_steps);
  std::vector<DatasetEntry> seen = warm_data;
  seen.insert(seen.end(), train_data.begin(), train_data.end());
  const auto eval = generate_heldout(c.data.eval_size, c.seed, seen, c.data.min_steps, c.data.max_steps);
  std::vector<Problem> train;
  for (const auto& e : train_data) train.push_back(e.problem);

  const fs::path ckpt = dir / "warmstart.ckpt", warm_info = dir / "warmstart.json";
  Policy policy(ModelConfig{}, 0);
  if (fs::exists(ckpt) && fs::exists(warm_info)) {
    policy = load_policy(ckpt).policy;
    const json info = json::parse(std::ifstream(warm_info));
    out.warm_accuracy = info.at("heldout_accuracy").get<double>();
    out.warm_seconds = info.at("seconds").get<double>();
  } else {
    ModelConfig mc = c.model;
    mc.vocab_size = tok.vocab_size();
    policy = Policy(mc, derive_seed(c.seed, "init"));
    const auto t0 = Clock::now();
    warmstart(policy, tok, warm_data, c.warmstart);
    out.warm_accuracy = greedy_accuracy(policy, tok, eval, c.train.sampler.max_new_tokens, workers);
    out.warm_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    save_policy(ckpt, policy, c.tokenizer);
    std::ofstream(warm_info) << json{{"heldout_accuracy", out.warm_accuracy},
                                     {"seconds", out.warm_seconds}}.dump(2);
  }
  std::printf("  warm start: held-out greedy accuracy %.3f (%.0f s)\n", out.warm_accuracy,
              out.warm_seconds);
  std::fflush(stdout);
  if (out.warm_accuracy < c.warmstart.min_accuracy) return out;

  TrainConfig tc = c.train;
  tc.workers = workers;
  RunOptions ro;
  ro.out_dir = dir / "run";
  ro.resume = true;
  ro.dump = c.dump_spans;
  ro.checkpoint_interval = c.checkpoint_interval;
  const fs::path timing = dir / "timing.json";
  out.fresh = !fs::exists(timing);
  out.report = run_experiment(policy, tok, tc, c.modes, c.seeds, train, eval, ro);
  if (out.fresh) {
    out.experiment_seconds = out.report.wall_seconds;
    std::ofstream(timing) << json{{"wall_seconds", out.experiment_seconds},
                                  {"workers", workers}}.dump(2);
  } else {
    out.experiment_seconds = json::parse(std::ifstream(timing)).at("wall_seconds").get<double>();
  }
  std::ofstream(dir / "report.json") << to_json(out.report).dump(2);
  return out;
}

Outcome directional(const Desk& d, const DeskResult& r) {
  const auto& c = d.cfg;
  if (r.warm_accuracy < c.warmstart.min_accuracy)
    return {false, fmt("warm start reached %.3f held-out accuracy, below the %.2f gate",
                       r.warm_accuracy, c.warmstart.min_accuracy)};
  const auto& rep = r.report;
  const double cf = rep.mean_final(WeightMode::kCounterfactual);
  const double un = rep.mean_final(WeightMode::kUniform);
  const double rn = rep.mean_final(WeightMode::kRandom);
  const double iv = rep.mean_final(WeightMode::kInverted);
  std::size_t wins = 0, seeds = 0;
  for (std::uint64_t s : c.seeds) {
    const ArmResult* a = rep.find(WeightMode::kCounterfactual, s);
    const ArmResult* b = rep.find(WeightMode::kInverted, s);
    if (!a || !b) continue;
    ++seeds;
    wins += a->final_accuracy - b->final_accuracy > 0.0;
  }
  const std::size_t need = (4 * seeds + 4) / 5;
  const bool scale = c.seeds.size() >= 5 && c.train.total_steps >= 300 && c.data.train_size >= 2000 &&
                     c.modes.size() == 4;
  const bool order = cf >= un && un > iv && wins >= need;
  const bool time = r.experiment_seconds <= 3600.0;
  return {scale && order && time,
          fmt("warm start %.3f; mean final accuracy cf %.4f, uniform %.4f, random %.4f, inverted %.4f; "
              "cf > inverted in %zu/%zu seeds; %zu modes x %zu seeds x %zu steps in %.1f min%s",
              r.warm_accuracy, cf, un, rn, iv, wins, seeds, c.modes.size(), c.seeds.size(),
              c.train.total_steps, r.experiment_seconds / 60.0, r.fresh ? "" : " (cached arms)"),
          scale};
}

// Reads a metrics CSV into header and rows of cells.
std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> read_csv(
    const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  std::getline(in, line);
  auto header = split(line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(split(line));
  return {header, rows};
}

Outcome overhead(const Desk& d, const DeskResult& r) {
  const auto& rep = r.report;
  if (rep.arms.empty()) return {false, "no arms were run"};
  std::size_t more = 0, pairs = 0;
  double cf_passes = 0, un_passes = 0, cf_time = 0, un_time = 0;
  for (std::uint64_t s : d.cfg.seeds) {
    const ArmResult* a = rep.find(WeightMode::kCounterfactual, s);
    const ArmResult* b = rep.find(WeightMode::kUniform, s);
    if (!a || !b) continue;
    ++pairs;
    const auto fa = a->totals.inference_passes + a->totals.gradient_passes;
    const auto fb = b->totals.inference_passes + b->totals.gradient_passes;
    more += fa > fb && a->totals.cf_passes > 0 && b->totals.cf_passes == 0;
    cf_passes += static_cast<double>(fa);
    un_passes += static_cast<double>(fb);
    cf_time += a->totals.times.total;
    un_time += b->totals.times.total;
  }
  const char* timing_cols[] = {"time_generation", "time_scoring", "time_cf", "time_update",
                               "time_total"};
  std::size_t files = 0, populated = 0;
  for (const auto& arm : rep.arms) {
    const auto [header, rows] = read_csv(r.run_dir / "run" / (arm.name + ".csv"));
    ++files;
    bool ok = !rows.empty();
    double total = 0.0;
    for (const char* col : timing_cols) {
      const auto it = std::find(header.begin(), header.end(), col);
      if (it == header.end()) {
        ok = false;
        continue;
      }
      const auto idx = static_cast<std::size_t>(it - header.begin());
      for (const auto& row : rows) {
        if (idx >= row.size() || row[idx].empty()) {
          ok = false;
          break;
        }
        total += std::stod(row[idx]);
      }
    }
    populated += ok && total > 0.0;
  }
  return {pairs > 0 && more == pairs && populated == files,
          fmt("cf arms ran more forward passes than uniform in %zu/%zu seeds (%.0f vs %.0f on "
              "average, step time +%.0f%%); timing columns populated in %zu/%zu CSVs",
              more, pairs, cf_passes / std::max<std::size_t>(pairs, 1),
              un_passes / std::max<std::size_t>(pairs, 1),
              un_time > 0 ? 100.0 * (cf_time - un_time) / un_time : 0.0, populated, files)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cfcredit acceptance checks"};
  std::string config_path, cache_dir = "acceptance_cache";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  bool skip_experiment = false;
  bool strict = false;
  std::size_t warmstart_problems = 30000;
  std::uint64_t warmstart_data_seed = 101;
  app.add_option("--config", config_path, "Desk experiment configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--cache", cache_dir, "Directory for checkpoints and arm results");
  app.add_option("--workers", workers, "Worker threads");
  app.add_option("--warmstart-problems", warmstart_problems, "Size of the warm-start corpus");
  app.add_option("--warmstart-seed", warmstart_data_seed, "Root seed of the warm-start corpus");
  app.add_flag("--skip-experiment", skip_experiment, "Only run the property checks");
  app.add_flag("--strict", strict, "Let empirical outcomes set the exit status too");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  std::vector<Row> rows;
  auto run = [&](const std::string& name, const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    rows.push_back({name, o, s});
    std::printf("%s  %-22s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), s);
    std::fflush(stdout);
  };

  run("loss-equivalence", loss_equivalence);
  run("gradient-correctness", gradient_check);
  run("advantage-oracle", advantage_oracle);
  run("complement-identity", complement_identity);
  run("masking-invariants", masking_invariants);
  run("skip-cache", skip_and_cache);
  run("analysis-oracles", analysis_oracles);

  bool experiment_ran = false;
  if (!skip_experiment) {
    const Desk desk = load_desk(config_path, warmstart_problems, warmstart_data_seed);
    DeskResult result;
    std::printf("  desk experiment: %zu modes x %zu seeds x %zu steps, %zu workers, cache %s\n",
                desk.cfg.modes.size(), desk.cfg.seeds.size(), desk.cfg.train.total_steps, workers,
                cache_dir.c_str());
    std::fflush(stdout);
    const auto t0 = Clock::now();
    try {
      result = run_desk(desk, cache_dir, workers);
      experiment_ran = true;
    } catch (const std::exception& e) {
      std::printf("  desk experiment failed: %s\n", e.what());
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    if (experiment_ran) {
      run("directional-experiment", [&] { return directional(desk, result); });
      rows.back().seconds = s;
      run("overhead-accounting", [&] { return overhead(desk, result); });
      for (const auto& d : result.report.deltas) {
        std::printf("  delta %s - %s: mean %+.4f over %zu seeds\n", std::string(to_string(d.a)).c_str(),
                    std::string(to_string(d.b)).c_str(), d.mean, d.per_seed.size());
      }
      std::printf("  report: %s\n", (result.run_dir / "report.json").c_str());
    } else {
      rows.push_back({"directional-experiment", {false, "did not run"}, s});
      rows.push_back({"overhead-accounting", {false, "did not run"}, 0.0});
      std::printf("FAIL  directional-experiment did not run\nFAIL  overhead-accounting did not run\n");
    }
  }

  std::size_t passed = 0, gating_failures = 0;
  std::string red;
  for (const auto& r : rows) {
    passed += r.outcome.pass;
    if (r.outcome.pass) continue;
    if (r.outcome.empirical && !strict) {
      red += (red.empty() ? "" : ", ") + r.name;
    } else {
      ++gating_failures;
    }
  }
  std::printf("%zu/%zu criteria passed%s\n", passed, rows.size(),
              skip_experiment ? " (experiment skipped)" : "");
  if (!red.empty())
    std::printf("red empirical outcome, reported without failing the run (use --strict to fail): %s\n",
                red.c_str());
  return gating_failures == 0 ? 0 : 1;
}
