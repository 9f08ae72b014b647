// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Group sampling, advantages, the token-weighted DAPO objective and one RL
// update.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfcredit/completion.hpp"
#include "cfcredit/corpus.hpp"
#include "cfcredit/counterfactual.hpp"
#include "cfcredit/optimizer.hpp"
#include "cfcredit/policy.hpp"
#include "cfcredit/spans.hpp"
#include "cfcredit/weighting.hpp"

namespace cfcredit {

// (r_i - mean) / (std + epsilon) with the population standard deviation, or
// the sample standard deviation when bessel is set. Requires G >= 2. Groups
// with equal rewards get exact zeros.
std::vector<double> group_advantages(std::span<const double> rewards, double epsilon,
                                     bool bessel = false);

// One completion as seen by the loss: per-token log-probabilities, weights
// and tokens (pad tokens are excluded from both sums and counts).
struct LossTerm {
  std::span<const double> logprobs;
  std::span<const double> weights;
  std::span<const TokenId> tokens;
  double advantage = 0.0;
};

// -(1 / sum_i T_i) sum_i sum_t w_t A_i log p_t.
double weighted_loss(std::span<const LossTerm> terms);
// The unweighted objective, written independently (weights are ignored).
double vanilla_loss(std::span<const LossTerm> terms);

// One completion in the policy loss: the prompt it was sampled from, its
// tokens, per-token weights and its advantage.
struct PolicyLossItem {
  std::span<const TokenId> prompt;
  std::span<const TokenId> completion;
  std::span<const double> weights;
  double advantage = 0.0;
};

// weighted_loss over items, with log-probabilities from the policy.
double policy_loss(const Policy& policy, std::span<const PolicyLossItem> items);

// Value and exact parameter gradient of policy_loss. Items with a zero
// advantage only count towards the token normalizer. Gradients are reduced
// in a fixed order over grad_accum micro-batches.
GradientResult policy_loss_gradient(const Policy& policy, std::span<const PolicyLossItem> items,
                                    std::size_t grad_accum = 1, std::size_t workers = 1);

struct TrainConfig {
  std::size_t group_size = 8;
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;  // prompts per update
  std::size_t grad_accum = 4;   // micro-batches per update
  std::size_t total_steps = 500;
  std::size_t eval_interval = 25;
  std::size_t eval_size = 200;
  SamplerConfig sampler{.temperature = 0.6, .top_p = 0.95, .max_new_tokens = 64};
  WeightConfig weight;
  SpanOptions spans;
  double advantage_epsilon = 1e-4;
  bool bessel = false;
  bool skip_uniform_groups = true;
  bool use_cache = true;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  void validate() const;
};

struct Group {
  const Problem* problem = nullptr;
  std::vector<Completion> completions;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<std::vector<Span>> spans;
  std::vector<CompletionEstimate> estimates;
};

struct PhaseTimes {
  double generation = 0.0;
  double scoring = 0.0;
  double cf = 0.0;
  double update = 0.0;
  double total = 0.0;

  friend bool operator==(const PhaseTimes&, const PhaseTimes&) = default;
};

struct StepMetrics {
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  bool updated = false;
  std::uint64_t groups = 0;
  std::uint64_t skipped_groups = 0;
  std::uint64_t spans = 0;
  std::uint64_t cf_passes = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t inference_passes = 0;
  std::uint64_t gradient_passes = 0;
  std::uint64_t decode_steps = 0;
  std::uint64_t completion_tokens = 0;
  PhaseTimes times;

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

// StepMetrics equality ignoring wall-clock times.
bool same_counts(const StepMetrics& a, const StepMetrics& b);

struct StepResult {
  StepMetrics metrics;
  std::vector<Group> groups;
};

// Problems used at a given step: a seeded pass over the training set.
std::vector<const Problem*> step_batch(std::span<const Problem> problems,
                                       const TrainConfig& cfg, std::uint64_t step);

// Sample, reward, detect spans, estimate importances, weight and update.
// The parameter update is skipped when no group carries signal, so an
// all-failed batch leaves the policy untouched.
StepResult train_step(Policy& policy, Adam& adam, WeightCache* cache, const Tokenizer& tok,
                      std::span<const Problem* const> batch, const TrainConfig& cfg,
                      std::uint64_t step);

}  // namespace cfcredit
