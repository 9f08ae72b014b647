// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/experiment.hpp"

#include <chrono>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cfcredit/checkpoint.hpp"
#include "cfcredit/dumps.hpp"
#include "cfcredit/error.hpp"
#include "cfcredit/warmstart.hpp"

#ifndef CFCREDIT_SOURCE_HASH
#define CFCREDIT_SOURCE_HASH "unknown"
#endif

namespace cfcredit {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

json times_json(const PhaseTimes& t) {
  return {{"generation", t.generation}, {"scoring", t.scoring}, {"cf", t.cf},
          {"update", t.update}, {"total", t.total}};
}

PhaseTimes times_from(const json& j) {
  return {j.at("generation").get<double>(), j.at("scoring").get<double>(),
          j.at("cf").get<double>(), j.at("update").get<double>(), j.at("total").get<double>()};
}

json totals_json(const ArmTotals& t) {
  return {{"steps", t.steps},
          {"updates", t.updates},
          {"cf_passes", t.cf_passes},
          {"inference_passes", t.inference_passes},
          {"gradient_passes", t.gradient_passes},
          {"decode_steps", t.decode_steps},
          {"cache_hits", t.cache_hits},
          {"skipped_groups", t.skipped_groups},
          {"times", times_json(t.times)},
          {"eval_seconds", t.eval_seconds}};
}

ArmTotals totals_from(const json& j) {
  ArmTotals t;
  t.steps = j.at("steps").get<std::uint64_t>();
  t.updates = j.at("updates").get<std::uint64_t>();
  t.cf_passes = j.at("cf_passes").get<std::uint64_t>();
  t.inference_passes = j.at("inference_passes").get<std::uint64_t>();
  t.gradient_passes = j.at("gradient_passes").get<std::uint64_t>();
  t.decode_steps = j.at("decode_steps").get<std::uint64_t>();
  t.cache_hits = j.at("cache_hits").get<std::uint64_t>();
  t.skipped_groups = j.at("skipped_groups").get<std::uint64_t>();
  t.times = times_from(j.at("times"));
  t.eval_seconds = j.at("eval_seconds").get<double>();
  return t;
}

json evals_json(const std::vector<EvalPoint>& evals) {
  json out = json::array();
  for (const auto& e : evals) out.push_back({{"step", e.step}, {"accuracy", e.accuracy}});
  return out;
}

std::vector<EvalPoint> evals_from(const json& j) {
  std::vector<EvalPoint> out;
  for (const auto& e : j) out.push_back({e.at("step").get<std::uint64_t>(), e.at("accuracy").get<double>()});
  return out;
}

void add(ArmTotals& t, const StepMetrics& m) {
  ++t.steps;
  if (m.updated) ++t.updates;
  t.cf_passes += m.cf_passes;
  t.inference_passes += m.inference_passes;
  t.gradient_passes += m.gradient_passes;
  t.decode_steps += m.decode_steps;
  t.cache_hits += m.cache_hits;
  t.skipped_groups += m.skipped_groups;
  t.times.generation += m.times.generation;
  t.times.scoring += m.times.scoring;
  t.times.cf += m.times.cf;
  t.times.update += m.times.update;
  t.times.total += m.times.total;
}

struct ArmPaths {
  std::filesystem::path csv, state, result, spans, weights, trace;
};

ArmPaths arm_paths(const std::filesystem::path& dir, const std::string& name) {
  return {dir / (name + ".csv"),           dir / (name + ".state"),
          dir / (name + ".result.json"),   dir / (name + ".spans.jsonl"),
          dir / (name + ".weights.jsonl"), dir / (name + ".trace.jsonl")};
}

struct ArmState {
  std::uint64_t step = 0;
  std::vector<EvalPoint> evals;
  std::vector<std::string> rows;
  ArmTotals totals;
};

void save_arm_state(const std::filesystem::path& path, const std::string& name,
                    const Policy& policy, const Adam& adam, const WeightCache& cache,
                    const ArmState& s) {
  Archive a;
  a.kind = "arm-state";
  a.meta = {{"name", name},       {"step", s.step},
            {"evals", evals_json(s.evals)}, {"rows", s.rows},
            {"totals", totals_json(s.totals)}, {"adam_steps", adam.steps()},
            {"cache_hits", cache.hits()}, {"cache_misses", cache.misses()},
            {"model", to_json(policy.config())}};
  a.f64["params"].assign(policy.params().begin(), policy.params().end());
  a.f64["adam_m"] = adam.first_moment();
  a.f64["adam_v"] = adam.second_moment();
  auto& keys = a.i64["cache_keys"];
  auto& lengths = a.i64["cache_lengths"];
  auto& modes = a.i64["cache_modes"];
  auto& prov = a.i64["cache_provenance"];
  auto& weights = a.f64["cache_weights"];
  auto& norm = a.f64["cache_normalized"];
  for (const auto& [key, w] : cache.entries()) {
    keys.push_back(static_cast<std::int64_t>(key));
    lengths.push_back(static_cast<std::int64_t>(w.weights.size()));
    modes.push_back(static_cast<std::int64_t>(w.mode));
    prov.insert(prov.end(), w.provenance.begin(), w.provenance.end());
    weights.insert(weights.end(), w.weights.begin(), w.weights.end());
    norm.insert(norm.end(), w.normalized.begin(), w.normalized.end());
  }
  write_archive(path, a);
}

ArmState load_arm_state(const std::filesystem::path& path, Policy& policy, Adam& adam,
                        WeightCache& cache) {
  Archive a = read_archive(path, "arm-state");
  ArmState s;
  try {
    if (model_config_from_json(a.meta.at("model")) != policy.config())
      fail(ErrorCode::kInvalidArgument, path.string() + " was written for a different model");
    s.step = a.meta.at("step").get<std::uint64_t>();
    s.evals = evals_from(a.meta.at("evals"));
    s.rows = a.meta.at("rows").get<std::vector<std::string>>();
    s.totals = totals_from(a.meta.at("totals"));
    auto& params = a.f64.at("params");
    require(params.size() == policy.num_params(), "checkpoint parameter count mismatch");
    std::ranges::copy(params, policy.mutable_params().begin());
    adam.restore(a.f64.at("adam_m"), a.f64.at("adam_v"),
                 a.meta.at("adam_steps").get<std::uint64_t>());
    const auto& keys = a.i64.at("cache_keys");
    const auto& lengths = a.i64.at("cache_lengths");
    const auto& modes = a.i64.at("cache_modes");
    const auto& prov = a.i64.at("cache_provenance");
    const auto& weights = a.f64.at("cache_weights");
    const auto& norm = a.f64.at("cache_normalized");
    std::vector<std::pair<std::uint64_t, TokenWeightVector>> entries;
    std::size_t at = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto n = static_cast<std::size_t>(lengths.at(i));
      require(at + n <= weights.size() && at + n <= prov.size() && at + n <= norm.size(),
              "corrupt cache section");
      TokenWeightVector w;
      w.mode = static_cast<WeightMode>(modes.at(i));
      w.weights.assign(weights.begin() + static_cast<std::ptrdiff_t>(at),
                       weights.begin() + static_cast<std::ptrdiff_t>(at + n));
      w.normalized.assign(norm.begin() + static_cast<std::ptrdiff_t>(at),
                          norm.begin() + static_cast<std::ptrdiff_t>(at + n));
      for (std::size_t k = at; k < at + n; ++k) w.provenance.push_back(static_cast<int>(prov[k]));
      entries.emplace_back(static_cast<std::uint64_t>(keys[i]), std::move(w));
      at += n;
    }
    cache.restore(std::move(entries), a.meta.at("cache_hits").get<std::uint64_t>(),
                  a.meta.at("cache_misses").get<std::uint64_t>());
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": bad arm state: " + e.what());
  } catch (const std::out_of_range&) {
    fail(ErrorCode::kParse, path.string() + ": arm state is missing a section");
  }
  return s;
}

}  // namespace

double curve_auc(std::span<const EvalPoint> curve) {
  if (curve.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : curve) s += e.accuracy;
  return s / static_cast<double>(curve.size());
}

const ArmResult* ExperimentReport::find(WeightMode mode, std::uint64_t seed) const {
  for (const auto& a : arms)
    if (a.mode == mode && a.seed == seed) return &a;
  return nullptr;
}

double ExperimentReport::mean_final(WeightMode mode) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& a : arms)
    if (a.mode == mode) {
      s += a.final_accuracy;
      ++n;
    }
  require(n > 0, "no arms for mode " + std::string(to_string(mode)));
  return s / static_cast<double>(n);
}

std::string arm_name(WeightMode mode, std::uint64_t seed) {
  return std::string(to_string(mode)) + "_seed" + std::to_string(seed);
}

std::string metrics_csv_header() {
  return "step,mean_reward,loss,grad_norm,updated,eval_accuracy,groups,skipped_groups,spans,"
         "cf_passes,cache_hits,cache_misses,inference_passes,gradient_passes,decode_steps,"
         "completion_tokens,time_generation,time_scoring,time_cf,time_update,time_total,"
         "time_eval";
}

std::string metrics_csv_row(const StepMetrics& m, const std::string& eval_accuracy,
                            double eval_seconds) {
  return fmt::format("{},{:.6f},{:.10g},{:.6g},{},{},{},{},{},{},{},{},{},{},{},{},{:.6f},{:.6f},"
                     "{:.6f},{:.6f},{:.6f},{:.6f}",
                     m.step, m.mean_reward, m.loss, m.grad_norm, m.updated ? 1 : 0,
                     eval_accuracy, m.groups, m.skipped_groups, m.spans, m.cf_passes,
                     m.cache_hits, m.cache_misses, m.inference_passes, m.gradient_passes,
                     m.decode_steps, m.completion_tokens, m.times.generation, m.times.scoring,
                     m.times.cf, m.times.update, m.times.total, eval_seconds);
}

ArmResult run_arm(const Policy& initial, const Tokenizer& tok, const TrainConfig& base,
                  WeightMode mode, std::uint64_t seed, std::span<const Problem> train,
                  std::span<const DatasetEntry> eval_all, const RunOptions& opt) {
  TrainConfig cfg = base;
  cfg.weight.mode = mode;
  cfg.seed = seed;
  cfg.validate();
  const std::string name = arm_name(mode, seed);
  const bool files = !opt.out_dir.empty();
  const ArmPaths paths = files ? arm_paths(opt.out_dir, name) : ArmPaths{};
  const auto eval = eval_all.first(std::min(cfg.eval_size, eval_all.size()));

  if (files && opt.resume && std::filesystem::exists(paths.result)) {
    spdlog::info("{}: already complete", name);
    return arm_result_from_json(json::parse(read_file(paths.result)));
  }

  Policy policy = initial;
  policy.reset_stats();
  Adam adam(AdamConfig{.learning_rate = cfg.learning_rate, .grad_clip = cfg.grad_clip},
            policy.num_params());
  WeightCache cache;
  ArmState state;

  auto evaluate = [&](std::uint64_t step) {
    const auto t0 = Clock::now();
    const double acc = eval.empty() ? 0.0
                                    : greedy_accuracy(policy, tok, eval,
                                                      cfg.sampler.max_new_tokens, cfg.workers);
    const double secs = seconds_since(t0);
    state.evals.push_back({step, acc});
    state.totals.eval_seconds += secs;
    spdlog::info("{}: step {} accuracy {:.3f}", name, step, acc);
    return std::pair{acc, secs};
  };

  std::ofstream csv;
  JsonlWriter span_log, weight_log, trace_log;
  if (files && opt.resume && std::filesystem::exists(paths.state)) {
    state = load_arm_state(paths.state, policy, adam, cache);
    spdlog::info("{}: resuming after step {}", name, state.step);
  }
  if (files) {
    std::string text = metrics_csv_header() + "\n";
    for (const auto& r : state.rows) text += r + "\n";
    write_file_atomic(paths.csv, text);
    csv.open(paths.csv, std::ios::app);
    if (!csv) fail(ErrorCode::kIo, "cannot write " + paths.csv.string());
    if (opt.dump) {
      const bool append = state.step > 0;
      if (append) {
        truncate_jsonl_from_step(paths.spans, state.step + 1);
        truncate_jsonl_from_step(paths.weights, state.step + 1);
        truncate_jsonl_from_step(paths.trace, state.step + 1);
      }
      span_log = JsonlWriter(paths.spans, append);
      weight_log = JsonlWriter(paths.weights, append);
      trace_log = JsonlWriter(paths.trace, append);
    }
  }
  auto emit_row = [&](const std::string& row) {
    state.rows.push_back(row);
    if (csv.is_open()) {
      csv << row << '\n';
      csv.flush();
    }
  };

  if (state.step == 0 && state.evals.empty()) {
    const auto [acc, secs] = evaluate(0);
    StepMetrics m0;
    emit_row(metrics_csv_row(m0, fmt::format("{:.6f}", acc), secs));
  }

  for (std::uint64_t step = state.step + 1; step <= cfg.total_steps; ++step) {
    const auto batch = step_batch(train, cfg, step - 1);
    StepResult res = train_step(policy, adam, &cache, tok, batch, cfg, step);
    add(state.totals, res.metrics);
    if (span_log.is_open()) {
      const StepDump d = make_step_dump(res);
      for (const auto& e : d.spans) span_log.write(to_json(e));
      for (const auto& e : d.weights) weight_log.write(to_json(e));
      for (const auto& e : d.trace) trace_log.write(to_json(e));
      span_log.flush();
      weight_log.flush();
      trace_log.flush();
    }
    std::string acc_text;
    double eval_secs = 0.0;
    if (step % cfg.eval_interval == 0 || step == cfg.total_steps) {
      const auto [acc, secs] = evaluate(step);
      acc_text = fmt::format("{:.6f}", acc);
      eval_secs = secs;
    }
    emit_row(metrics_csv_row(res.metrics, acc_text, eval_secs));
    state.step = step;
    if (files && step % opt.checkpoint_interval == 0 && step < cfg.total_steps)
      save_arm_state(paths.state, name, policy, adam, cache, state);
  }

  ArmResult r;
  r.mode = mode;
  r.seed = seed;
  r.name = name;
  r.evals = state.evals;
  r.final_accuracy = state.evals.empty() ? 0.0 : state.evals.back().accuracy;
  r.auc = curve_auc(state.evals);
  r.totals = state.totals;
  if (files) {
    write_file_atomic(paths.result, to_json(r).dump(2));
    std::error_code ec;
    std::filesystem::remove(paths.state, ec);
  }
  return r;
}

ExperimentReport run_experiment(const Policy& initial, const Tokenizer& tok,
                                const TrainConfig& cfg, std::span<const WeightMode> modes,
                                std::span<const std::uint64_t> seeds,
                                std::span<const Problem> train,
                                std::span<const DatasetEntry> eval, const RunOptions& options) {
  const auto t0 = Clock::now();
  ExperimentReport report;
  for (WeightMode mode : modes) {
    RunOptions arm_options = options;
    arm_options.dump = options.dump && needs_importance(mode);
    for (std::uint64_t seed : seeds)
      report.arms.push_back(run_arm(initial, tok, cfg, mode, seed, train, eval, arm_options));
  }
  report.deltas = paired_deltas(report.arms);
  report.wall_seconds = seconds_since(t0);
  return report;
}

std::vector<PairedDelta> paired_deltas(const std::vector<ArmResult>& arms) {
  using M = WeightMode;
  const std::pair<M, M> pairs[] = {{M::kCounterfactual, M::kUniform},
                                   {M::kCounterfactual, M::kInverted},
                                   {M::kCounterfactual, M::kRandom},
                                   {M::kUniform, M::kInverted},
                                   {M::kRandom, M::kInverted}};
  std::vector<PairedDelta> out;
  for (const auto& [a, b] : pairs) {
    PairedDelta d{a, b, {}, 0.0};
    for (const auto& x : arms) {
      if (x.mode != a) continue;
      for (const auto& y : arms)
        if (y.mode == b && y.seed == x.seed)
          d.per_seed.emplace_back(x.seed, x.final_accuracy - y.final_accuracy);
    }
    if (d.per_seed.empty()) continue;
    for (const auto& [s, v] : d.per_seed) d.mean += v;
    d.mean /= static_cast<double>(d.per_seed.size());
    out.push_back(std::move(d));
  }
  return out;
}

json to_json(const ArmResult& a) {
  return {{"name", a.name},
          {"mode", to_string(a.mode)},
          {"seed", a.seed},
          {"evals", evals_json(a.evals)},
          {"final_accuracy", a.final_accuracy},
          {"auc", a.auc},
          {"totals", totals_json(a.totals)}};
}

ArmResult arm_result_from_json(const json& j) {
  ArmResult a;
  try {
    a.name = j.at("name").get<std::string>();
    a.mode = weight_mode_from_string(j.at("mode").get<std::string>());
    a.seed = j.at("seed").get<std::uint64_t>();
    a.evals = evals_from(j.at("evals"));
    a.final_accuracy = j.at("final_accuracy").get<double>();
    a.auc = j.at("auc").get<double>();
    a.totals = totals_from(j.at("totals"));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("bad arm result: ") + e.what());
  }
  return a;
}

json to_json(const ExperimentReport& r) {
  json arms = json::array();
  for (const auto& a : r.arms) arms.push_back(to_json(a));
  json deltas = json::array();
  for (const auto& d : r.deltas) {
    json per = json::array();
    for (const auto& [s, v] : d.per_seed) per.push_back({{"seed", s}, {"delta", v}});
    deltas.push_back({{"a", to_string(d.a)}, {"b", to_string(d.b)}, {"per_seed", per},
                      {"mean", d.mean}});
  }
  json means = json::object();
  for (const auto& a : r.arms)
    if (!means.contains(std::string(to_string(a.mode))))
      means[std::string(to_string(a.mode))] = r.mean_final(a.mode);
  return {{"arms", arms}, {"paired_deltas", deltas}, {"mean_final_accuracy", means},
          {"wall_seconds", r.wall_seconds}};
}

std::string source_hash() { return CFCREDIT_SOURCE_HASH; }

json RunManifest::to_json() const {
  return {{"command", command}, {"code_version", source_hash()}, {"config", config},
          {"seeds", seeds},     {"outputs", outputs},            {"timings", timings},
          {"status", status}};
}

void RunManifest::write(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json().dump(2) + "\n");
}

}  // namespace cfcredit
