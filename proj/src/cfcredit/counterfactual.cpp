// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/counterfactual.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "cfcredit/error.hpp"
#include "cfcredit/rng.hpp"

namespace cfcredit {
namespace {

// Model inputs for seq: BOS followed by all but the last token.
std::vector<TokenId> inputs_for(std::span<const TokenId> seq) {
  std::vector<TokenId> in;
  in.reserve(seq.size());
  in.push_back(Tokenizer::kBos);
  in.insert(in.end(), seq.begin(), seq.end() - 1);
  return in;
}

double sum_rows(const std::vector<double>& rows, std::span<const TokenId> targets,
                std::size_t v) {
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    total += rows[i * v + static_cast<std::size_t>(targets[i])];
  return total;
}

// Scores seq from input position `from` on, given a state holding inputs
// [0, from). Returns the summed log-probability of seq[answer_start, end).
double score_suffix(InferenceState& state, std::span<const TokenId> inputs,
                    std::span<const TokenId> seq, std::size_t from,
                    std::size_t answer_start, std::size_t v) {
  std::vector<double> rows;
  state.feed(inputs.subspan(from), &rows, answer_start - from);
  return sum_rows(rows, seq.subspan(answer_start), v);
}

}  // namespace

double answer_logprob(const Policy& policy, std::span<const TokenId> prompt,
                      std::span<const TokenId> reasoning, std::span<const TokenId> answer) {
  require(!answer.empty(), "answer span is empty; the drop is undefined");
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), reasoning.begin(), reasoning.end());
  seq.insert(seq.end(), answer.begin(), answer.end());
  require(seq.size() <= policy.config().context,
          "sequence of length " + std::to_string(seq.size()) +
              " exceeds the context length " + std::to_string(policy.config().context));
  const std::vector<TokenId> in = inputs_for(seq);
  policy.record_inference_pass();
  InferenceState state(policy);
  return score_suffix(state, in, seq, 0, prompt.size() + reasoning.size(),
                      policy.config().vocab_size);
}

MaskedVariant mask_span(const TokenizedSequence& seq, const Span& span, int span_id) {
  const TokenRange r = span.token_range;
  require(r.start <= r.end, "span token range is inverted");
  if (!r.empty())
    require(r.end <= seq.boundary && r.end <= seq.size(),
            "span [" + std::to_string(r.start) + ", " + std::to_string(r.end) +
                ") overlaps the answer region starting at " + std::to_string(seq.boundary));
  MaskedVariant m{seq.token_ids, span_id, seq.size()};
  std::fill(m.token_ids.begin() + static_cast<std::ptrdiff_t>(r.start),
            m.token_ids.begin() + static_cast<std::ptrdiff_t>(r.end), Tokenizer::kPad);
  return m;
}

SpanImportance make_importance(int span_id, double drop) {
  return {span_id, drop, -drop, drop > 0.0};
}

SpanImportance span_drop(const Policy& policy, const Completion& c, const Span& span,
                         int span_id) {
  const auto& ids = c.tokens.token_ids;
  const std::size_t b = c.tokens.boundary;
  const MaskedVariant masked = mask_span(c.tokens, span, span_id);
  const std::span<const TokenId> answer = std::span(ids).subspan(b);
  const double base =
      answer_logprob(policy, c.prompt.token_ids, std::span(ids).first(b), answer);
  const double alt = answer_logprob(policy, c.prompt.token_ids,
                                    std::span(masked.token_ids).first(b), answer);
  return make_importance(span_id, alt - base);
}

std::uint64_t completion_key(std::string_view prompt_text, std::string_view completion_text) {
  const std::string len = std::to_string(prompt_text.size()) + ":";
  std::uint64_t h = fnv1a(len);
  h = fnv1a(prompt_text, h);
  return fnv1a(completion_text, h);
}

std::optional<TokenWeightVector> WeightCache::find(std::uint64_t key) {
  std::lock_guard lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  return it->second;
}

void WeightCache::insert(std::uint64_t key, const TokenWeightVector& weights) {
  std::lock_guard lock(mu_);
  map_.insert_or_assign(key, weights);
}

std::uint64_t WeightCache::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}

std::uint64_t WeightCache::misses() const {
  std::lock_guard lock(mu_);
  return misses_;
}

std::size_t WeightCache::size() const {
  std::lock_guard lock(mu_);
  return map_.size();
}

std::vector<std::pair<std::uint64_t, TokenWeightVector>> WeightCache::entries() const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<std::uint64_t, TokenWeightVector>> out(map_.begin(), map_.end());
  std::ranges::sort(out, {}, [](const auto& e) { return e.first; });
  return out;
}

void WeightCache::restore(std::vector<std::pair<std::uint64_t, TokenWeightVector>> entries,
                          std::uint64_t hits, std::uint64_t misses) {
  std::lock_guard lock(mu_);
  map_.clear();
  for (auto& [k, w] : entries) map_.emplace(k, std::move(w));
  hits_ = hits;
  misses_ = misses;
}

CompletionEstimate estimate_completion(const Policy& policy, const Completion& c,
                                       std::span<const Span> spans,
                                       const WeightConfig& wcfg, WeightCache* cache,
                                       bool skip) {
  CompletionEstimate est;
  const std::size_t n = c.tokens.size();
  const std::size_t b = c.tokens.boundary;
  if (skip) {
    est.skipped = true;
    est.weights = unit_weights(n, wcfg.mode);
    return est;
  }
  if (!needs_importance(wcfg.mode)) {
    const std::vector<double> zeros(spans.size(), 0.0);
    est.weights = assign_weights(spans, zeros, wcfg, c.tokens);
    return est;
  }
  if (b >= n) {
    est.weights = unit_weights(n, wcfg.mode);
    return est;
  }

  const std::uint64_t key = completion_key(c.prompt_text, c.text);
  if (cache) {
    if (auto hit = cache->find(key)) {
      est.cache_hit = true;
      est.weights = std::move(*hit);
      return est;
    }
  }

  const std::vector<TokenId> seq = c.full_sequence();
  require(seq.size() <= policy.config().context,
          "sequence of length " + std::to_string(seq.size()) +
              " exceeds the context length " + std::to_string(policy.config().context));
  const std::size_t p = c.prompt.size();
  const std::size_t v = policy.config().vocab_size;
  const std::size_t answer_start = p + b;
  std::vector<TokenId> in = inputs_for(seq);
  InferenceState state(policy);
  policy.record_inference_pass();
  ++est.forward_passes;
  const double base = score_suffix(state, in, seq, 0, answer_start, v);

  est.importances.resize(spans.size());
  std::vector<std::size_t> order(spans.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::sort(order, std::ranges::greater{},
                    [&](std::size_t k) { return spans[k].token_range.start; });
  for (std::size_t k : order) {
    const TokenRange r = spans[k].token_range;
    require(r.start <= r.end && r.end <= b,
            "span overlaps the answer region of the completion");
    policy.record_inference_pass();
    ++est.forward_passes;
    if (r.empty()) {
      est.importances[k] = make_importance(static_cast<int>(k), 0.0);
      continue;
    }
    // Input p + t + 1 carries completion token t.
    const std::size_t from = p + r.start + 1;
    std::vector<TokenId> masked = in;
    std::fill(masked.begin() + static_cast<std::ptrdiff_t>(from),
              masked.begin() + static_cast<std::ptrdiff_t>(p + r.end + 1), Tokenizer::kPad);
    state.truncate(from);
    const double alt = score_suffix(state, masked, seq, from, answer_start, v);
    est.importances[k] = make_importance(static_cast<int>(k), alt - base);
  }

  std::vector<double> importance(spans.size());
  for (std::size_t k = 0; k < spans.size(); ++k) importance[k] = est.importances[k].importance;
  est.weights = assign_weights(spans, importance, wcfg, c.tokens);
  if (cache) cache->insert(key, est.weights);
  return est;
}

}  // namespace cfcredit
