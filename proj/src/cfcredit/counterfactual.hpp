// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mask-and-measure span importance.

#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cfcredit/completion.hpp"
#include "cfcredit/policy.hpp"
#include "cfcredit/spans.hpp"
#include "cfcredit/weighting.hpp"

namespace cfcredit {

// Sum of log p(a_t | x, r, a_<t) under teacher forcing, without gradient
// state. Throws on an empty answer.
double answer_logprob(const Policy& policy, std::span<const TokenId> prompt,
                      std::span<const TokenId> reasoning, std::span<const TokenId> answer);

struct MaskedVariant {
  std::vector<TokenId> token_ids;
  int span_id = -1;
  std::size_t original_length = 0;
};

// Replaces the span's tokens with the pad symbol. seq.boundary marks the
// answer region, which the span must not touch.
MaskedVariant mask_span(const TokenizedSequence& seq, const Span& span, int span_id = 0);

struct SpanImportance {
  int span_id = -1;
  double drop = 0.0;        // log P(a | masked) - log P(a | original)
  double importance = 0.0;  // -drop
  bool is_distractor = false;
};

SpanImportance make_importance(int span_id, double drop);

// Drop of one span, scored with two fresh passes.
SpanImportance span_drop(const Policy& policy, const Completion& completion,
                         const Span& span, int span_id = 0);

// Hash of (prompt text, completion text).
std::uint64_t completion_key(std::string_view prompt_text, std::string_view completion_text);

class WeightCache {
 public:
  std::optional<TokenWeightVector> find(std::uint64_t key);
  void insert(std::uint64_t key, const TokenWeightVector& weights);

  std::uint64_t hits() const;
  std::uint64_t misses() const;
  std::size_t size() const;

  // Snapshot for checkpoints, sorted by key.
  std::vector<std::pair<std::uint64_t, TokenWeightVector>> entries() const;
  void restore(std::vector<std::pair<std::uint64_t, TokenWeightVector>> entries,
               std::uint64_t hits, std::uint64_t misses);

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, TokenWeightVector> map_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

struct CompletionEstimate {
  std::vector<SpanImportance> importances;  // empty when skipped or cached
  TokenWeightVector weights;
  bool skipped = false;
  bool cache_hit = false;
  std::uint64_t forward_passes = 0;
};

// Full procedure for one completion. When skip is set (the host group has
// equal rewards) nothing is scored, the cache is untouched and the weights
// are all one. Otherwise the cache is consulted first; on a miss the
// unmasked answer log-probability is scored once and each span costs one
// more pass. Masked passes reuse the unmasked prefix up to the span start,
// which gives the same values as scoring each variant from scratch.
// A completion without an answer span gets unit weights and no passes.
CompletionEstimate estimate_completion(const Policy& policy, const Completion& completion,
                                       std::span<const Span> spans,
                                       const WeightConfig& weights, WeightCache* cache,
                                       bool skip);

}  // namespace cfcredit
