// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-arm RL experiments: one arm per (mode, seed), shared warm start,
// per-arm metrics CSV, resumable checkpoints and a run manifest.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfcredit/config.hpp"
#include "cfcredit/corpus.hpp"
#include "cfcredit/policy.hpp"
#include "cfcredit/trainer.hpp"

namespace cfcredit {

struct EvalPoint {
  std::uint64_t step = 0;
  double accuracy = 0.0;
};

// Mean of the evaluation-point accuracies; 0 for an empty curve.
double curve_auc(std::span<const EvalPoint> curve);

struct ArmTotals {
  std::uint64_t steps = 0;
  std::uint64_t updates = 0;
  std::uint64_t cf_passes = 0;
  std::uint64_t inference_passes = 0;
  std::uint64_t gradient_passes = 0;
  std::uint64_t decode_steps = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t skipped_groups = 0;
  PhaseTimes times;
  double eval_seconds = 0.0;
};

struct ArmResult {
  WeightMode mode = WeightMode::kUniform;
  std::uint64_t seed = 0;
  std::vector<EvalPoint> evals;
  double final_accuracy = 0.0;
  double auc = 0.0;
  ArmTotals totals;
  std::string name;  // file stem, e.g. "counterfactual_seed1"
};

struct PairedDelta {
  WeightMode a = WeightMode::kCounterfactual;
  WeightMode b = WeightMode::kUniform;
  std::vector<std::pair<std::uint64_t, double>> per_seed;  // final(a) - final(b)
  double mean = 0.0;
};

struct ExperimentReport {
  std::vector<ArmResult> arms;
  std::vector<PairedDelta> deltas;
  double wall_seconds = 0.0;

  const ArmResult* find(WeightMode mode, std::uint64_t seed) const;
  double mean_final(WeightMode mode) const;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool resume = false;
  bool dump = false;
  std::size_t checkpoint_interval = 25;
};

std::string arm_name(WeightMode mode, std::uint64_t seed);

ArmResult run_arm(const Policy& initial, const Tokenizer& tok, const TrainConfig& cfg,
                  WeightMode mode, std::uint64_t seed, std::span<const Problem> train,
                  std::span<const DatasetEntry> eval, const RunOptions& options);

// Every (mode, seed) pair, in mode-major order.
ExperimentReport run_experiment(const Policy& initial, const Tokenizer& tok,
                                const TrainConfig& cfg, std::span<const WeightMode> modes,
                                std::span<const std::uint64_t> seeds,
                                std::span<const Problem> train,
                                std::span<const DatasetEntry> eval, const RunOptions& options);

// Differences of final accuracy between mode pairs present in the report,
// computed per seed and averaged.
std::vector<PairedDelta> paired_deltas(const std::vector<ArmResult>& arms);

nlohmann::json to_json(const ArmResult& arm);
ArmResult arm_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentReport& report);

// Header of the per-arm metrics CSV.
std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m, const std::string& eval_accuracy,
                            double eval_seconds);

// Code version baked in at build time.
std::string source_hash();

// Manifest of one CLI invocation, rewritten atomically as the run proceeds.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;
  nlohmann::json timings = nlohmann::json::object();
  std::string status = "started";

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

}  // namespace cfcredit
