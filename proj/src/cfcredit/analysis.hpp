// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Offline statistics over span and weight logs: drop distributions,
// categorical bins, pattern enrichment, position and length effects,
// distractors and gradient-mass concentration.

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfcredit/dumps.hpp"
#include "cfcredit/spans.hpp"

namespace cfcredit {

struct DistributionStats {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

// Central-moment estimators. Needs two or more values that are not all equal.
DistributionStats distribution_stats(std::span<const double> values);

inline constexpr std::size_t kNumDropBins = 5;

// Category order: critical, important, moderate, low, distractor.
struct DropBins {
  // Upper edges of the first four categories; the last is [cuts[3], +inf).
  std::array<double, 4> cuts{-500.0, -200.0, -50.0, 0.0};

  static DropBins absolute(double critical, double important, double moderate);
  // Cuts placed at the given cumulative shares of the sorted drops. The
  // distractor edge stays at zero.
  static DropBins quantile(std::span<const double> drops,
                           std::array<double, 3> cumulative_shares = {0.109, 0.413, 0.867});
  void validate() const;
};

std::string_view drop_bin_name(std::size_t bin);

struct BinCounts {
  DropBins bins;
  std::array<std::size_t, kNumDropBins> counts{};
  std::array<double, kNumDropBins> percent{};
  std::size_t total = 0;
};

std::size_t drop_bin(double drop, const DropBins& bins);
BinCounts bin_drops(std::span<const double> drops, const DropBins& bins = {});

struct Enrichment {
  PatternLabel label = PatternLabel::kCalcChain;
  std::size_t critical_hits = 0;
  std::size_t critical_total = 0;
  std::size_t low_hits = 0;
  std::size_t low_total = 0;
  // Ratio of prevalences; +inf when only the critical set has the label,
  // empty when neither set has it.
  std::optional<double> ratio;

  double critical_prevalence() const;
  double low_prevalence() const;
};

Enrichment enrichment(std::span<const PatternLabels> critical, std::span<const PatternLabels> low,
                      PatternLabel label);

enum class Third { kEarly = 0, kMiddle = 1, kLate = 2 };

// [0, L/3) early, [L/3, 2L/3) middle, [2L/3, L) late, using exact integer
// comparisons (3 * start against L and 2L).
Third position_third(std::size_t start, std::size_t length);

struct PositionInput {
  std::size_t start = 0;
  std::size_t reasoning_length = 0;
  double drop = 0.0;
};

struct PositionReport {
  std::array<std::size_t, 3> counts{};
  std::array<std::optional<double>, 3> mean_drop;
};

PositionReport position_analysis(std::span<const PositionInput> spans);

// Pearson correlation. Needs three or more pairs and two non-constant series.
double pearson(std::span<const double> x, std::span<const double> y);

enum class Tier { kLow = 0, kMedium = 1, kHigh = 2 };
Tier importance_tier(double normalized);

struct TierShare {
  std::size_t tokens = 0;
  double mass = 0.0;
  double count_share = 0.0;
  double mass_share = 0.0;
  std::optional<double> ratio;  // empty for a tier without tokens
};

struct ConcentrationReport {
  std::array<TierShare, 3> tiers;  // indexed by Tier
  std::size_t tokens = 0;
  double mass = 0.0;
};

// Weights and normalized importances are aligned per token.
ConcentrationReport concentration(std::span<const double> weights,
                                  std::span<const double> normalized);
ConcentrationReport concentration(std::span<const WeightDumpEntry> entries);

struct DistractorSpan {
  std::string completion_id;
  std::string text;
  double drop = 0.0;
  bool correct = false;
};

struct DistractorReport {
  std::size_t count = 0;
  std::size_t total = 0;
  double share = 0.0;
  double share_in_incorrect = 0.0;  // among distractors
  std::vector<DistractorSpan> top;  // by drop, descending
};

DistractorReport distractor_report(std::span<const SpanDumpEntry> entries,
                                   std::size_t top_n = 10);

struct WeightHistogram {
  double lo = 0.0;
  double width = 0.1;
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  double share_at_min = 0.0;
  double share_at_max = 0.0;
};

WeightHistogram weight_histogram(std::span<const WeightDumpEntry> entries, double w_min,
                                 double w_max, double width = 0.1);

struct OutcomeDrops {
  std::size_t correct_count = 0;
  std::optional<double> correct_mean;
  std::size_t incorrect_count = 0;
  std::optional<double> incorrect_mean;
};

OutcomeDrops outcome_drops(std::span<const SpanDumpEntry> entries);

struct AnalysisOptions {
  bool quantile_bins = false;
  DropBins bins;
  double w_min = 0.5;
  double w_max = 4.0;
  std::size_t top_distractors = 10;
  std::size_t qualitative_limit = 20;  // completions in the qualitative table
};

struct AnalysisReport {
  std::size_t completions = 0;
  std::size_t estimated_spans = 0;
  std::optional<DistributionStats> distribution;
  BinCounts bins;
  std::vector<Enrichment> enrichment;
  PositionReport position;
  std::optional<double> length_r;
  ConcentrationReport concentration;
  DistractorReport distractors;
  WeightHistogram histogram;
  OutcomeDrops outcomes;
  std::vector<std::string> notes;  // reasons a section is empty
};

AnalysisReport analyze(std::span<const SpanDumpEntry> spans,
                       std::span<const WeightDumpEntry> weights, const AnalysisOptions& options);

nlohmann::json to_json(const AnalysisReport& report);
std::string bins_csv(const BinCounts& bins);
std::string enrichment_csv(std::span<const Enrichment> rows);
std::string concentration_csv(const ConcentrationReport& report);
std::string distractors_csv(const DistractorReport& report);
std::string histogram_csv(const WeightHistogram& histogram);
std::string position_csv(const PositionReport& report);

// One block per completion: its prompt, then each span with kind, drop,
// normalized importance and labels, ordered as in the completion.
std::string qualitative_table(std::span<const SpanDumpEntry> entries, std::size_t limit);

}  // namespace cfcredit
