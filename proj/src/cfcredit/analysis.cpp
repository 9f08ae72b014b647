// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <fmt/format.h>

#include "cfcredit/error.hpp"

namespace cfcredit {
namespace {

using nlohmann::json;

json optional_json(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

// Infinite ratios are written as the string "inf".
json ratio_json(const std::optional<double>& x) {
  if (!x) return nullptr;
  if (std::isinf(*x)) return "inf";
  return *x;
}

std::string csv_optional(const std::optional<double>& x) {
  if (!x) return "";
  if (std::isinf(*x)) return "inf";
  return fmt::format("{:.6g}", *x);
}

std::string csv_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

constexpr std::array<std::string_view, 3> kThirdNames{"early", "middle", "late"};
constexpr std::array<std::string_view, 3> kTierNames{"low", "medium", "high"};

}  // namespace

DistributionStats distribution_stats(std::span<const double> values) {
  require(values.size() >= 2, "distribution statistics need at least two values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  require(m2 > 0.0, "skewness and kurtosis are undefined for constant input");
  DistributionStats s;
  s.count = values.size();
  s.mean = mean;
  s.std = std::sqrt(m2);
  s.skewness = m3 / std::pow(m2, 1.5);
  s.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  return s;
}

DropBins DropBins::absolute(double critical, double important, double moderate) {
  DropBins b;
  b.cuts = {critical, important, moderate, 0.0};
  b.validate();
  return b;
}

DropBins DropBins::quantile(std::span<const double> drops, std::array<double, 3> shares) {
  std::vector<double> negative;
  for (double d : drops)
    if (d < 0.0) negative.push_back(d);
  DropBins b;
  if (negative.empty()) return b;
  std::ranges::sort(negative);
  // Shares are of all drops; distractors sit above every cut.
  const double n = static_cast<double>(drops.size());
  double upper = 0.0;
  for (int i = 2; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(std::llround(shares[static_cast<std::size_t>(i)] * n));
    double cut = k < negative.size() ? negative[k] : upper;
    if (cut >= upper) cut = std::nextafter(upper, -std::numeric_limits<double>::infinity());
    b.cuts[static_cast<std::size_t>(i)] = cut;
    upper = cut;
  }
  b.validate();
  return b;
}

void DropBins::validate() const {
  for (std::size_t i = 1; i < cuts.size(); ++i)
    require(cuts[i - 1] < cuts[i], "drop-bin thresholds must be strictly increasing");
  require(std::ranges::all_of(cuts, [](double c) { return std::isfinite(c); }),
          "drop-bin thresholds must be finite");
}

std::string_view drop_bin_name(std::size_t bin) {
  static constexpr std::array<std::string_view, kNumDropBins> names{
      "critical", "important", "moderate", "low", "distractor"};
  require(bin < names.size(), "bad drop bin");
  return names[bin];
}

std::size_t drop_bin(double drop, const DropBins& bins) {
  for (std::size_t i = 0; i < bins.cuts.size(); ++i)
    if (drop < bins.cuts[i]) return i;
  return kNumDropBins - 1;
}

BinCounts bin_drops(std::span<const double> drops, const DropBins& bins) {
  bins.validate();
  BinCounts out;
  out.bins = bins;
  for (double d : drops) ++out.counts[drop_bin(d, bins)];
  out.total = drops.size();
  if (out.total > 0)
    for (std::size_t i = 0; i < kNumDropBins; ++i)
      out.percent[i] = 100.0 * static_cast<double>(out.counts[i]) / static_cast<double>(out.total);
  return out;
}

double Enrichment::critical_prevalence() const {
  return critical_total ? static_cast<double>(critical_hits) / static_cast<double>(critical_total)
                        : 0.0;
}

double Enrichment::low_prevalence() const {
  return low_total ? static_cast<double>(low_hits) / static_cast<double>(low_total) : 0.0;
}

Enrichment enrichment(std::span<const PatternLabels> critical, std::span<const PatternLabels> low,
                      PatternLabel label) {
  require(!critical.empty() && !low.empty(), "enrichment needs non-empty span sets");
  Enrichment e;
  e.label = label;
  e.critical_total = critical.size();
  e.low_total = low.size();
  for (const auto& l : critical) e.critical_hits += has_label(l, label);
  for (const auto& l : low) e.low_hits += has_label(l, label);
  if (e.low_hits == 0) {
    if (e.critical_hits > 0) e.ratio = std::numeric_limits<double>::infinity();
  } else {
    e.ratio = e.critical_prevalence() / e.low_prevalence();
  }
  return e;
}

Third position_third(std::size_t start, std::size_t length) {
  require(start < length, "span start lies outside the reasoning prefix");
  if (3 * start < length) return Third::kEarly;
  if (3 * start < 2 * length) return Third::kMiddle;
  return Third::kLate;
}

PositionReport position_analysis(std::span<const PositionInput> spans) {
  PositionReport r;
  std::array<double, 3> sums{};
  for (const auto& s : spans) {
    const auto t = static_cast<std::size_t>(position_third(s.start, s.reasoning_length));
    ++r.counts[t];
    sums[t] += s.drop;
  }
  for (std::size_t t = 0; t < 3; ++t)
    if (r.counts[t] > 0) r.mean_drop[t] = sums[t] / static_cast<double>(r.counts[t]);
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "correlation needs paired series");
  require(x.size() >= 3, "correlation needs at least three pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  require(sxx > 0.0 && syy > 0.0, "correlation is undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

Tier importance_tier(double normalized) {
  if (normalized > 0.8) return Tier::kHigh;
  if (normalized > 0.5) return Tier::kMedium;
  return Tier::kLow;
}

ConcentrationReport concentration(std::span<const double> weights,
                                  std::span<const double> normalized) {
  require(weights.size() == normalized.size(), "weights and importances differ in length");
  ConcentrationReport r;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    auto& tier = r.tiers[static_cast<std::size_t>(importance_tier(normalized[i]))];
    ++tier.tokens;
    tier.mass += weights[i];
    r.mass += weights[i];
  }
  r.tokens = weights.size();
  for (auto& t : r.tiers) {
    if (r.tokens == 0) break;
    t.count_share = static_cast<double>(t.tokens) / static_cast<double>(r.tokens);
    t.mass_share = r.mass > 0.0 ? t.mass / r.mass : 0.0;
    if (t.tokens > 0) t.ratio = t.mass_share / t.count_share;
  }
  return r;
}

ConcentrationReport concentration(std::span<const WeightDumpEntry> entries) {
  std::vector<double> w, z;
  for (const auto& e : entries) {
    require(e.weights.size() == e.normalized.size(), "weights and importances differ in length");
    w.insert(w.end(), e.weights.begin(), e.weights.end());
    z.insert(z.end(), e.normalized.begin(), e.normalized.end());
  }
  return concentration(w, z);
}

DistractorReport distractor_report(std::span<const SpanDumpEntry> entries, std::size_t top_n) {
  DistractorReport r;
  std::vector<DistractorSpan> all;
  std::size_t in_incorrect = 0;
  for (const auto& e : entries)
    for (const auto& s : e.spans) {
      if (!s.drop) continue;
      ++r.total;
      if (*s.drop > 0.0) {
        all.push_back({e.completion_id, s.text, *s.drop, e.reward > 0});
        if (e.reward <= 0) ++in_incorrect;
      }
    }
  r.count = all.size();
  if (r.total > 0) r.share = static_cast<double>(r.count) / static_cast<double>(r.total);
  if (r.count > 0) r.share_in_incorrect = static_cast<double>(in_incorrect) / static_cast<double>(r.count);
  std::ranges::stable_sort(all, [](const auto& a, const auto& b) { return a.drop > b.drop; });
  if (all.size() > top_n) all.resize(top_n);
  r.top = std::move(all);
  return r;
}

WeightHistogram weight_histogram(std::span<const WeightDumpEntry> entries, double w_min,
                                 double w_max, double width) {
  require(w_min < w_max && width > 0.0, "bad histogram range");
  WeightHistogram h;
  h.lo = w_min;
  h.width = width;
  const auto bins = static_cast<std::size_t>(std::ceil((w_max - w_min) / width - 1e-9));
  h.counts.assign(bins, 0);
  std::size_t at_min = 0, at_max = 0;
  for (const auto& e : entries)
    for (double w : e.weights) {
      const double pos = std::floor((w - w_min) / width + 1e-9);
      const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
      ++h.counts[b];
      ++h.total;
      at_min += w == w_min;
      at_max += w == w_max;
    }
  if (h.total > 0) {
    h.share_at_min = static_cast<double>(at_min) / static_cast<double>(h.total);
    h.share_at_max = static_cast<double>(at_max) / static_cast<double>(h.total);
  }
  return h;
}

OutcomeDrops outcome_drops(std::span<const SpanDumpEntry> entries) {
  OutcomeDrops o;
  double sc = 0.0, si = 0.0;
  for (const auto& e : entries)
    for (const auto& s : e.spans) {
      if (!s.drop) continue;
      if (e.reward > 0) {
        ++o.correct_count;
        sc += *s.drop;
      } else {
        ++o.incorrect_count;
        si += *s.drop;
      }
    }
  if (o.correct_count) o.correct_mean = sc / static_cast<double>(o.correct_count);
  if (o.incorrect_count) o.incorrect_mean = si / static_cast<double>(o.incorrect_count);
  return o;
}

AnalysisReport analyze(std::span<const SpanDumpEntry> spans,
                       std::span<const WeightDumpEntry> weights, const AnalysisOptions& opt) {
  AnalysisReport r;
  r.completions = spans.size();
  std::vector<double> drops, lengths;
  std::vector<PositionInput> positions;
  std::unordered_set<std::string> skipped;
  for (const auto& e : spans) {
    if (e.skipped) skipped.insert(e.completion_id);
    for (const auto& s : e.spans) {
      if (!s.drop) continue;
      drops.push_back(*s.drop);
      lengths.push_back(static_cast<double>(s.token_range.size()));
      if (s.token_range.start < e.reasoning_tokens)
        positions.push_back({s.token_range.start, e.reasoning_tokens, *s.drop});
    }
  }
  r.estimated_spans = drops.size();
  if (spans.empty()) r.notes.push_back("span dump is empty");
  if (drops.empty()) r.notes.push_back("no estimated spans: drop statistics are empty");

  if (drops.size() >= 2 && std::ranges::any_of(drops, [&](double d) { return d != drops[0]; }))
    r.distribution = distribution_stats(drops);
  else if (!drops.empty())
    r.notes.push_back("drop distribution is degenerate");

  const DropBins bins = opt.quantile_bins ? DropBins::quantile(drops) : opt.bins;
  r.bins = bin_drops(drops, bins);

  std::vector<PatternLabels> critical, low;
  for (const auto& e : spans)
    for (const auto& s : e.spans) {
      if (!s.drop) continue;
      const std::size_t b = drop_bin(*s.drop, bins);
      if (b == 0) critical.push_back(s.labels);
      if (b == 3) low.push_back(s.labels);
    }
  if (!critical.empty() && !low.empty()) {
    for (std::size_t l = 0; l < kNumPatternLabels; ++l)
      r.enrichment.push_back(enrichment(critical, low, static_cast<PatternLabel>(l)));
  } else if (!drops.empty()) {
    r.notes.push_back("enrichment needs both critical and low spans");
  }

  r.position = position_analysis(positions);
  if (lengths.size() >= 3) {
    try {
      r.length_r = pearson(lengths, drops);
    } catch (const Error&) {
      r.notes.push_back("length correlation is undefined for constant lengths or drops");
    }
  }

  std::vector<WeightDumpEntry> weighted;
  for (const auto& w : weights)
    if (needs_importance(w.mode) && !skipped.contains(w.completion_id)) weighted.push_back(w);
  r.concentration = concentration(weighted);
  r.histogram = weight_histogram(weighted, opt.w_min, opt.w_max);
  if (weighted.empty()) r.notes.push_back("no importance-weighted completions in the weight dump");

  r.distractors = distractor_report(spans, opt.top_distractors);
  r.outcomes = outcome_drops(spans);
  return r;
}

json to_json(const AnalysisReport& r) {
  json out;
  out["completions"] = r.completions;
  out["estimated_spans"] = r.estimated_spans;
  if (r.distribution) {
    const auto& d = *r.distribution;
    out["distribution"] = {{"count", d.count},       {"mean", d.mean},
                           {"std", d.std},           {"skewness", d.skewness},
                           {"excess_kurtosis", d.excess_kurtosis}};
  } else {
    out["distribution"] = nullptr;
  }
  json bins = json::array();
  for (std::size_t i = 0; i < kNumDropBins; ++i)
    bins.push_back({{"category", drop_bin_name(i)},
                    {"upper", i < 4 ? json(r.bins.bins.cuts[i]) : json(nullptr)},
                    {"count", r.bins.counts[i]},
                    {"percent", r.bins.percent[i]}});
  out["bins"] = bins;
  json enr = json::array();
  for (const auto& e : r.enrichment)
    enr.push_back({{"label", to_string(e.label)},
                   {"critical_hits", e.critical_hits},
                   {"critical_total", e.critical_total},
                   {"low_hits", e.low_hits},
                   {"low_total", e.low_total},
                   {"ratio", ratio_json(e.ratio)}});
  out["enrichment"] = enr;
  json pos = json::array();
  for (std::size_t t = 0; t < 3; ++t)
    pos.push_back({{"third", kThirdNames[t]},
                   {"count", r.position.counts[t]},
                   {"mean_drop", optional_json(r.position.mean_drop[t])}});
  out["position"] = pos;
  out["length_correlation"] = optional_json(r.length_r);
  json tiers = json::array();
  for (std::size_t t = 3; t-- > 0;) {
    const auto& s = r.concentration.tiers[t];
    tiers.push_back({{"tier", kTierNames[t]},
                     {"tokens", s.tokens},
                     {"count_share", s.count_share},
                     {"mass_share", s.mass_share},
                     {"ratio", optional_json(s.ratio)}});
  }
  out["concentration"] = {{"tokens", r.concentration.tokens},
                          {"mass", r.concentration.mass},
                          {"tiers", tiers}};
  json top = json::array();
  for (const auto& d : r.distractors.top)
    top.push_back({{"completion_id", d.completion_id}, {"text", d.text}, {"drop", d.drop},
                   {"correct", d.correct}});
  out["distractors"] = {{"count", r.distractors.count},
                        {"total", r.distractors.total},
                        {"share", r.distractors.share},
                        {"share_in_incorrect", r.distractors.share_in_incorrect},
                        {"top", top}};
  out["weight_histogram"] = {{"lo", r.histogram.lo},
                             {"width", r.histogram.width},
                             {"counts", r.histogram.counts},
                             {"total", r.histogram.total},
                             {"share_at_min", r.histogram.share_at_min},
                             {"share_at_max", r.histogram.share_at_max}};
  out["outcome_drops"] = {{"correct_count", r.outcomes.correct_count},
                          {"correct_mean", optional_json(r.outcomes.correct_mean)},
                          {"incorrect_count", r.outcomes.incorrect_count},
                          {"incorrect_mean", optional_json(r.outcomes.incorrect_mean)}};
  out["notes"] = r.notes;
  return out;
}

std::string bins_csv(const BinCounts& b) {
  std::string out = "category,lower,upper,count,percent\n";
  for (std::size_t i = 0; i < kNumDropBins; ++i) {
    const std::string lower = i == 0 ? "-inf" : fmt::format("{:.6g}", b.bins.cuts[i - 1]);
    const std::string upper = i == kNumDropBins - 1 ? "inf" : fmt::format("{:.6g}", b.bins.cuts[i]);
    out += fmt::format("{},{},{},{},{:.2f}\n", drop_bin_name(i), lower, upper, b.counts[i],
                       b.percent[i]);
  }
  return out;
}

std::string enrichment_csv(std::span<const Enrichment> rows) {
  std::string out = "label,critical_hits,critical_total,critical_percent,low_hits,low_total,"
                    "low_percent,enrichment\n";
  for (const auto& e : rows)
    out += fmt::format("{},{},{},{:.2f},{},{},{:.2f},{}\n", to_string(e.label), e.critical_hits,
                       e.critical_total, 100.0 * e.critical_prevalence(), e.low_hits, e.low_total,
                       100.0 * e.low_prevalence(), e.ratio ? csv_optional(e.ratio) : "n/a");
  return out;
}

std::string concentration_csv(const ConcentrationReport& r) {
  std::string out = "tier,tokens,count_share,mass_share,ratio\n";
  for (std::size_t t = 3; t-- > 0;) {
    const auto& s = r.tiers[t];
    out += fmt::format("{},{},{:.6f},{:.6f},{}\n", kTierNames[t], s.tokens, s.count_share,
                       s.mass_share, csv_optional(s.ratio));
  }
  return out;
}

std::string distractors_csv(const DistractorReport& r) {
  std::string out = "rank,completion_id,drop,correct,text\n";
  for (std::size_t i = 0; i < r.top.size(); ++i) {
    const auto& d = r.top[i];
    out += fmt::format("{},{},{:.6g},{},{}\n", i + 1, d.completion_id, d.drop, d.correct ? 1 : 0,
                       csv_quote(d.text));
  }
  return out;
}

std::string histogram_csv(const WeightHistogram& h) {
  std::string out = "lower,upper,count,share\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double lo = h.lo + h.width * static_cast<double>(i);
    out += fmt::format("{:.2f},{:.2f},{},{:.6f}\n", lo, lo + h.width, h.counts[i],
                       h.total ? static_cast<double>(h.counts[i]) / static_cast<double>(h.total)
                               : 0.0);
  }
  return out;
}

std::string position_csv(const PositionReport& r) {
  std::string out = "third,count,mean_drop\n";
  for (std::size_t t = 0; t < 3; ++t)
    out += fmt::format("{},{},{}\n", kThirdNames[t], r.counts[t], csv_optional(r.mean_drop[t]));
  return out;
}

std::string qualitative_table(std::span<const SpanDumpEntry> entries, std::size_t limit) {
  std::string out;
  std::size_t shown = 0;
  for (const auto& e : entries) {
    if (shown == limit) break;
    if (e.spans.empty()) continue;
    ++shown;
    out += fmt::format("== {} (reward {}{})\n", e.completion_id, e.reward,
                       e.skipped ? ", skipped" : "");
    out += "prompt: " + e.prompt + "\n";
    out += fmt::format("{:<4} {:<11} {:>12} {:>8}  {:<28} {}\n", "id", "kind", "drop",
                       "norm", "labels", "text");
    for (const auto& s : e.spans) {
      std::string labels;
      for (const auto& l : label_names(s.labels)) labels += (labels.empty() ? "" : ",") + l;
      std::string text = s.text;
      std::ranges::replace(text, '\n', ' ');
      out += fmt::format("{:<4} {:<11} {:>12} {:>8}  {:<28} {}\n", s.span_id, to_string(s.kind),
                         s.drop ? fmt::format("{:.4f}", *s.drop) : "-",
                         s.normalized ? fmt::format("{:.3f}", *s.normalized) : "-",
                         labels.empty() ? "-" : labels, text);
    }
    out += "\n";
  }
  return out;
}

}  // namespace cfcredit
