// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-token weights from span importances.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cfcredit/spans.hpp"
#include "cfcredit/tokenizer.hpp"

namespace cfcredit {

enum class WeightMode { kCounterfactual, kInverted, kRandom, kUniform };

std::string_view to_string(WeightMode mode);
// Accepts "counterfactual" (or "cf"), "inverted", "random", "uniform".
WeightMode weight_mode_from_string(std::string_view name);
// Modes that need span importances.
inline bool needs_importance(WeightMode m) {
  return m == WeightMode::kCounterfactual || m == WeightMode::kInverted;
}

struct WeightConfig {
  double w_min = 0.5;
  double w_max = 4.0;
  double w_ans = 1.5;
  double epsilon = 1e-8;
  WeightMode mode = WeightMode::kCounterfactual;
  std::uint64_t rng_seed = 0;
  // Applies w_ans to answer tokens in uniform mode too.
  bool uniform_answer_boost = false;

  void validate() const;
};

struct TokenWeightVector {
  std::vector<double> weights;   // one per completion token
  WeightMode mode = WeightMode::kUniform;
  std::vector<int> provenance;   // span id per token, -1 outside spans
  std::vector<double> normalized;  // normalized importance per token, 0 outside spans

  friend bool operator==(const TokenWeightVector&, const TokenWeightVector&) = default;
};

// (I - min) / (max - min + epsilon). Requires a non-empty list.
std::vector<double> normalize(std::span<const double> importances, double epsilon);

// seq is the completion; tokens from seq.boundary on form the answer span.
// In random mode rng_seed selects the draws; callers derive it per
// completion.
TokenWeightVector assign_weights(std::span<const Span> spans,
                                 std::span<const double> importances,
                                 const WeightConfig& cfg, const TokenizedSequence& seq);

// All-ones weights, used when importance estimation is skipped.
TokenWeightVector unit_weights(std::size_t n, WeightMode mode);

}  // namespace cfcredit
