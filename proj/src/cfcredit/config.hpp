// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one JSON document, with dotted-path overrides.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfcredit/policy.hpp"
#include "cfcredit/tokenizer.hpp"
#include "cfcredit/trainer.hpp"
#include "cfcredit/warmstart.hpp"
#include "cfcredit/weighting.hpp"

namespace cfcredit {

struct DataConfig {
  std::size_t train_size = 2000;
  std::size_t eval_size = 200;
  int min_steps = kMinSteps;
  int max_steps = kMaxSteps;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;  // root of every random stream
  TokenizerKind tokenizer = TokenizerKind::kWord;
  DataConfig data;
  ModelConfig model;
  WarmstartConfig warmstart;
  TrainConfig train;
  std::vector<WeightMode> modes{WeightMode::kCounterfactual, WeightMode::kUniform,
                                WeightMode::kInverted, WeightMode::kRandom};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool dump_spans = true;  // span/weight/trace logs for importance-based arms
  std::size_t checkpoint_interval = 25;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Sets a dotted path ("train.learning_rate") to a value given as text. The
// text is parsed as JSON when possible and used as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view path, std::string_view value);

std::vector<WeightMode> parse_modes(std::string_view csv);
std::vector<std::uint64_t> parse_seeds(std::string_view csv);

}  // namespace cfcredit
