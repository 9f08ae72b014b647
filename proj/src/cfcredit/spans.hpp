// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reasoning span detection and content-pattern labels.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfcredit/tokenizer.hpp"

namespace cfcredit {

struct Completion;

enum class SpanKind { kArithmetic, kCalcChain, kSentence };

std::string_view to_string(SpanKind kind);
SpanKind span_kind_from_string(std::string_view name);

struct TokenRange {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool empty() const { return end <= start; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct Span {
  CharRange char_range;
  TokenRange token_range;
  SpanKind kind = SpanKind::kSentence;
  std::string text;
};

enum class SpanSelection { kFirst, kLongest };

struct SpanOptions {
  std::size_t k_max = 10;
  SpanSelection selection = SpanSelection::kFirst;
};

// Spans of reasoning_text ordered by start. char_offsets are the token
// offsets of the text the reasoning is a prefix of; only tokens whose range
// intersects a span are included in its token range. Tokens at or after
// `limit` are never included.
std::vector<Span> detect_spans(std::string_view reasoning_text,
                               std::span<const CharRange> char_offsets,
                               const SpanOptions& options = {},
                               std::size_t limit = static_cast<std::size_t>(-1));

// Spans of a completion's reasoning prefix (text before the answer marker).
std::vector<Span> detect_spans(const Completion& completion, const SpanOptions& options = {});

struct PatternLabels {
  bool calc_chain = false;
  bool mul_div = false;
  bool proportion_rate = false;
  bool total_sum = false;
  bool conclusion = false;
  bool equation_setup = false;
  bool step_header = false;

  friend bool operator==(const PatternLabels&, const PatternLabels&) = default;
};

enum class PatternLabel {
  kCalcChain,
  kMulDiv,
  kProportionRate,
  kTotalSum,
  kConclusion,
  kEquationSetup,
  kStepHeader,
};

inline constexpr std::size_t kNumPatternLabels = 7;

std::string_view to_string(PatternLabel label);
PatternLabel pattern_label_from_string(std::string_view name);
bool has_label(const PatternLabels& labels, PatternLabel label);
std::vector<std::string> label_names(const PatternLabels& labels);
PatternLabels labels_from_names(std::span<const std::string> names);

PatternLabels classify_pattern(std::string_view span_text);
inline PatternLabels classify_pattern(const Span& span) { return classify_pattern(span.text); }

}  // namespace cfcredit
