// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/weighting.hpp"

#include <algorithm>
#include <string>

#include "cfcredit/error.hpp"
#include "cfcredit/rng.hpp"

namespace cfcredit {

std::string_view to_string(WeightMode mode) {
  switch (mode) {
    case WeightMode::kCounterfactual: return "counterfactual";
    case WeightMode::kInverted: return "inverted";
    case WeightMode::kRandom: return "random";
    case WeightMode::kUniform: return "uniform";
  }
  return "uniform";
}

WeightMode weight_mode_from_string(std::string_view name) {
  if (name == "counterfactual" || name == "cf") return WeightMode::kCounterfactual;
  if (name == "inverted") return WeightMode::kInverted;
  if (name == "random") return WeightMode::kRandom;
  if (name == "uniform" || name == "vanilla") return WeightMode::kUniform;
  fail(ErrorCode::kInvalidArgument, "unknown weighting mode '" + std::string(name) + "'");
}

void WeightConfig::validate() const {
  require(w_min > 0.0 && w_min <= w_max, "weights need 0 < w_min <= w_max");
  require(w_ans > 0.0, "w_ans must be positive");
  require(epsilon > 0.0, "epsilon must be positive");
}

std::vector<double> normalize(std::span<const double> importances, double epsilon) {
  require(!importances.empty(), "normalize needs at least one importance");
  const auto [lo, hi] = std::ranges::minmax(importances);
  std::vector<double> out(importances.size());
  for (std::size_t i = 0; i < importances.size(); ++i)
    out[i] = (importances[i] - lo) / (hi - lo + epsilon);
  return out;
}

TokenWeightVector unit_weights(std::size_t n, WeightMode mode) {
  TokenWeightVector w;
  w.mode = mode;
  w.weights.assign(n, 1.0);
  w.provenance.assign(n, -1);
  w.normalized.assign(n, 0.0);
  return w;
}

TokenWeightVector assign_weights(std::span<const Span> spans,
                                 std::span<const double> importances,
                                 const WeightConfig& cfg, const TokenizedSequence& seq) {
  cfg.validate();
  require(spans.size() == importances.size(),
          "got " + std::to_string(importances.size()) + " importances for " +
              std::to_string(spans.size()) + " spans");
  const std::size_t n = seq.size();
  const std::size_t boundary = std::min(seq.boundary, n);
  TokenWeightVector out = unit_weights(n, cfg.mode);

  for (std::size_t k = 0; k < spans.size(); ++k) {
    const TokenRange r = spans[k].token_range;
    require(r.end <= n, "span token range exceeds the completion");
    for (std::size_t t = r.start; t < r.end; ++t) out.provenance[t] = static_cast<int>(k);
  }

  const double span_width = cfg.w_max - cfg.w_min;
  if (needs_importance(cfg.mode) && !spans.empty()) {
    const std::vector<double> norm = normalize(importances, cfg.epsilon);
    for (std::size_t k = 0; k < spans.size(); ++k) {
      const double w_cf = cfg.w_min + norm[k] * span_width;
      // The inverted weight is taken as the exact complement within the range.
      const double w = cfg.mode == WeightMode::kCounterfactual
                           ? w_cf
                           : (cfg.w_min + cfg.w_max) - w_cf;
      for (std::size_t t = spans[k].token_range.start; t < spans[k].token_range.end; ++t) {
        out.weights[t] = w;
        out.normalized[t] = norm[k];
      }
    }
  } else if (cfg.mode == WeightMode::kRandom) {
    Rng rng(derive_seed(cfg.rng_seed, "random-weights"));
    for (std::size_t t = 0; t < n; ++t)
      out.weights[t] = cfg.w_min + uniform01(rng) * span_width;
  }

  const bool boost = cfg.mode != WeightMode::kUniform || cfg.uniform_answer_boost;
  if (boost)
    for (std::size_t t = boundary; t < n; ++t) out.weights[t] = cfg.w_ans;
  return out;
}

}  // namespace cfcredit
