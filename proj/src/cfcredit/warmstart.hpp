// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Supervised warm start on reference traces, so that sampled groups have
// mixed rewards from the first RL step.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cfcredit/corpus.hpp"
#include "cfcredit/optimizer.hpp"
#include "cfcredit/policy.hpp"
#include "cfcredit/tokenizer.hpp"

namespace cfcredit {

struct WarmstartConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  AdamConfig adam{.learning_rate = 3e-3};
  double final_lr_fraction = 0.1;  // cosine decay floor
  std::size_t warmup_updates = 100;  // linear ramp
  std::uint64_t seed = 1;
  double min_accuracy = 0.30;  // RL gate
};

struct WarmstartReport {
  std::vector<double> epoch_loss;  // mean nats per completion token
  std::size_t updates = 0;
};

// Teacher-forced sequence for one problem: prompt ++ reasoning ++ answer ++
// EOS, and the number of leading prompt tokens.
struct TrainingExample {
  std::vector<TokenId> tokens;
  std::size_t prompt_length = 0;
};
TrainingExample encode_example(const Tokenizer& tok, const DatasetEntry& entry);

// Mean cross-entropy over completion tokens, in nats per token.
double completion_cross_entropy(const Policy& policy, const Tokenizer& tok,
                                std::span<const DatasetEntry> data);

// Minimises completion cross-entropy with Adam. Zero epochs leaves the
// policy untouched.
WarmstartReport warmstart(Policy& policy, const Tokenizer& tok,
                          std::span<const DatasetEntry> data, const WarmstartConfig& cfg);

// Exact-match accuracy of greedy decoding.
double greedy_accuracy(const Policy& policy, const Tokenizer& tok,
                       std::span<const DatasetEntry> problems,
                       std::size_t max_new_tokens = 80, std::size_t workers = 1);

// Throws ErrorCode::kGate carrying the measured accuracy when below threshold.
void check_gate(double accuracy, double threshold);

}  // namespace cfcredit
