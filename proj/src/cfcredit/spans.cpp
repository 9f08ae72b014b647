// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/spans.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>

#include "cfcredit/completion.hpp"
#include "cfcredit/error.hpp"

namespace cfcredit {
namespace {

// Rule set version 1.
const std::string kNum = R"((?:\$?\d+(?:,\d{3})*(?:\.\d+)?%?))";
const std::string kOp = R"((?:\s*(?:[-+*/x]|\xC3\x97|\xC3\xB7)\s*))";
const std::string kExpr = kNum + "(?:" + kOp + kNum + ")*";

const std::regex& arithmetic_re() {
  static const std::regex re(kExpr + R"((?:\s*=\s*)" + kExpr + ")+");
  return re;
}

const std::regex& three_term_sum_re() {
  static const std::regex re(kNum + R"(\s*\+\s*)" + kNum + R"(\s*\+\s*)" + kNum);
  return re;
}

const std::regex& fraction_re() {
  static const std::regex re(R"(\d+/\d+)");
  return re;
}

const std::regex& step_header_re() {
  static const std::regex re(R"(^\s*[Ss]tep\s+\d+\s*:)");
  return re;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

CharRange trim(std::string_view text, CharRange r) {
  while (r.start < r.end && is_space(text[r.start])) ++r.start;
  while (r.end > r.start && is_space(text[r.end - 1])) --r.end;
  return r;
}

bool has_alnum(std::string_view text, CharRange r) {
  for (std::size_t i = r.start; i < r.end; ++i)
    if (is_alnum(text[i])) return true;
  return false;
}

std::vector<CharRange> sentences(std::string_view text) {
  std::vector<CharRange> out;
  std::size_t start = 0;
  auto close = [&](std::size_t end) {
    const CharRange r = trim(text, {start, end});
    if (!r.empty()) out.push_back(r);
    start = end;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      close(i);
      start = i + 1;
    } else if (c == '!' || c == '?') {
      close(i + 1);
    } else if (c == '.') {
      const bool decimal = i > 0 && i + 1 < text.size() && is_digit(text[i - 1]) &&
                           is_digit(text[i + 1]);
      if (!decimal) close(i + 1);
    }
  }
  close(text.size());
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool starts_with_word(std::string_view s, std::string_view word) {
  if (!s.starts_with(word)) return false;
  return s.size() == word.size() || !is_alnum(s[word.size()]);
}

}  // namespace

std::string_view to_string(SpanKind kind) {
  switch (kind) {
    case SpanKind::kArithmetic: return "arithmetic";
    case SpanKind::kCalcChain: return "calc_chain";
    case SpanKind::kSentence: return "sentence";
  }
  return "sentence";
}

SpanKind span_kind_from_string(std::string_view name) {
  if (name == "arithmetic") return SpanKind::kArithmetic;
  if (name == "calc_chain") return SpanKind::kCalcChain;
  if (name == "sentence") return SpanKind::kSentence;
  fail(ErrorCode::kParse, "unknown span kind '" + std::string(name) + "'");
}

std::vector<Span> detect_spans(std::string_view text, std::span<const CharRange> offsets,
                               const SpanOptions& options, std::size_t limit) {
  require(options.k_max >= 1, "k_max must be at least 1");
  std::vector<Span> found;

  std::vector<CharRange> arith;
  for (auto it = std::regex_iterator<std::string_view::const_iterator>(
           text.begin(), text.end(), arithmetic_re());
       it != std::regex_iterator<std::string_view::const_iterator>(); ++it) {
    const auto start = static_cast<std::size_t>(it->position(0));
    const CharRange r{start, start + static_cast<std::size_t>(it->length(0))};
    arith.push_back(r);
    const std::string_view body = text.substr(r.start, r.end - r.start);
    const auto eq = std::count(body.begin(), body.end(), '=');
    found.push_back({r, {}, eq >= 2 ? SpanKind::kCalcChain : SpanKind::kArithmetic,
                     std::string(body)});
  }

  // Sentences keep only the pieces not covered by arithmetic matches.
  for (const CharRange& s : sentences(text)) {
    std::size_t at = s.start;
    auto emit = [&](std::size_t end) {
      const CharRange r = trim(text, {at, end});
      if (!r.empty() && has_alnum(text, r))
        found.push_back({r, {}, SpanKind::kSentence,
                         std::string(text.substr(r.start, r.end - r.start))});
    };
    for (const CharRange& a : arith) {
      if (!a.intersects(s)) continue;
      emit(std::max(at, std::min(a.start, s.end)));
      at = std::max(at, a.end);
    }
    if (at < s.end) emit(s.end);
  }
  std::ranges::sort(found, {}, [](const Span& sp) { return sp.char_range.start; });

  std::vector<Span> mapped;
  std::size_t prev_end = 0;
  for (Span& sp : found) {
    std::size_t first = offsets.size(), last = 0;
    for (std::size_t i = 0; i < offsets.size() && i < limit; ++i) {
      if (offsets[i].empty() || !offsets[i].intersects(sp.char_range)) continue;
      first = std::min(first, i);
      last = i + 1;
    }
    if (first >= last) continue;
    first = std::max(first, prev_end);
    if (first >= last) continue;
    sp.token_range = {first, last};
    prev_end = last;
    mapped.push_back(std::move(sp));
  }

  if (mapped.size() > options.k_max) {
    if (options.selection == SpanSelection::kLongest) {
      std::ranges::stable_sort(mapped, std::ranges::greater{},
                               [](const Span& sp) { return sp.token_range.size(); });
      mapped.resize(options.k_max);
      std::ranges::sort(mapped, {}, [](const Span& sp) { return sp.token_range.start; });
    } else {
      mapped.resize(options.k_max);
    }
  }
  return mapped;
}

std::vector<Span> detect_spans(const Completion& completion, const SpanOptions& options) {
  const std::string reasoning = completion.reasoning_text();
  return detect_spans(reasoning, completion.tokens.char_offsets, options,
                      completion.tokens.boundary);
}

namespace {

constexpr std::array<std::string_view, kNumPatternLabels> kLabelNames{
    "calc_chain", "mul_div", "proportion_rate", "total_sum",
    "conclusion", "equation_setup", "step_header"};

}  // namespace

std::string_view to_string(PatternLabel label) {
  return kLabelNames[static_cast<std::size_t>(label)];
}

PatternLabel pattern_label_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i)
    if (kLabelNames[i] == name) return static_cast<PatternLabel>(i);
  fail(ErrorCode::kParse, "unknown pattern label '" + std::string(name) + "'");
}

bool has_label(const PatternLabels& l, PatternLabel label) {
  switch (label) {
    case PatternLabel::kCalcChain: return l.calc_chain;
    case PatternLabel::kMulDiv: return l.mul_div;
    case PatternLabel::kProportionRate: return l.proportion_rate;
    case PatternLabel::kTotalSum: return l.total_sum;
    case PatternLabel::kConclusion: return l.conclusion;
    case PatternLabel::kEquationSetup: return l.equation_setup;
    case PatternLabel::kStepHeader: return l.step_header;
  }
  return false;
}

std::vector<std::string> label_names(const PatternLabels& labels) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kNumPatternLabels; ++i)
    if (has_label(labels, static_cast<PatternLabel>(i))) out.emplace_back(kLabelNames[i]);
  return out;
}

PatternLabels labels_from_names(std::span<const std::string> names) {
  PatternLabels l;
  for (const auto& n : names) {
    switch (pattern_label_from_string(n)) {
      case PatternLabel::kCalcChain: l.calc_chain = true; break;
      case PatternLabel::kMulDiv: l.mul_div = true; break;
      case PatternLabel::kProportionRate: l.proportion_rate = true; break;
      case PatternLabel::kTotalSum: l.total_sum = true; break;
      case PatternLabel::kConclusion: l.conclusion = true; break;
      case PatternLabel::kEquationSetup: l.equation_setup = true; break;
      case PatternLabel::kStepHeader: l.step_header = true; break;
    }
  }
  return l;
}

PatternLabels classify_pattern(std::string_view text) {
  PatternLabels l;
  const std::string low = lower(text);
  const std::string s(text);
  l.calc_chain = std::count(text.begin(), text.end(), '=') >= 2;
  l.mul_div = s.find_first_of("*/") != std::string::npos ||
              s.find("\xC3\x97") != std::string::npos || s.find("\xC3\xB7") != std::string::npos;
  l.total_sum = low.find("total") != std::string::npos ||
                low.find("sum") != std::string::npos ||
                low.find("altogether") != std::string::npos ||
                std::regex_search(s, three_term_sum_re());
  std::string_view head(low);
  while (!head.empty() && is_space(head.front())) head.remove_prefix(1);
  l.conclusion = starts_with_word(head, "therefore") || starts_with_word(head, "so") ||
                 starts_with_word(head, "thus");
  l.equation_setup = low.find("let ") != std::string::npos;
  l.step_header = std::regex_search(s, step_header_re());
  l.proportion_rate = low.find("per ") != std::string::npos ||
                      low.find("each") != std::string::npos ||
                      low.find("rate") != std::string::npos ||
                      std::regex_search(s, fraction_re());
  return l;
}

}  // namespace cfcredit
