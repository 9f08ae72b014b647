// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "cfcredit/error.hpp"
#include "cfcredit/parallel.hpp"
#include "cfcredit/rng.hpp"

namespace cfcredit {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::size_t counted_tokens(std::span<const TokenId> tokens) {
  return static_cast<std::size_t>(
      std::ranges::count_if(tokens, [](TokenId t) { return t != Tokenizer::kPad; }));
}

}  // namespace

std::vector<double> group_advantages(std::span<const double> rewards, double epsilon,
                                     bool bessel) {
  require(rewards.size() >= 2, "a group needs at least two completions");
  require(epsilon >= 0.0, "epsilon must be non-negative");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / (bessel ? n - 1.0 : n));
  std::vector<double> out(rewards.size(), 0.0);
  if (std::ranges::all_of(rewards, [&](double r) { return r == rewards.front(); })) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / (sd + epsilon);
  return out;
}

double weighted_loss(std::span<const LossTerm> terms) {
  double total_tokens = 0.0;
  for (const auto& term : terms) {
    require(term.weights.size() == term.logprobs.size(),
            "every completion token needs a weight");
    require(term.tokens.size() == term.logprobs.size(), "one log-probability per token");
    total_tokens += static_cast<double>(counted_tokens(term.tokens));
  }
  if (total_tokens == 0.0) return 0.0;
  double sum = 0.0;
  for (const auto& term : terms)
    for (std::size_t t = 0; t < term.logprobs.size(); ++t)
      if (term.tokens[t] != Tokenizer::kPad)
        sum += term.weights[t] * term.advantage * term.logprobs[t];
  const double loss = -sum / total_tokens;
  if (!std::isfinite(loss)) fail(ErrorCode::kNumeric, "non-finite loss");
  return loss;
}

double vanilla_loss(std::span<const LossTerm> terms) {
  std::size_t total_tokens = 0;
  double sum = 0.0;
  for (const auto& term : terms) {
    require(term.tokens.size() == term.logprobs.size(), "one log-probability per token");
    for (std::size_t t = 0; t < term.tokens.size(); ++t) {
      if (term.tokens[t] == Tokenizer::kPad) continue;
      ++total_tokens;
      sum += term.advantage * term.logprobs[t];
    }
  }
  if (total_tokens == 0) return 0.0;
  return -sum / static_cast<double>(total_tokens);
}

double policy_loss(const Policy& policy, std::span<const PolicyLossItem> items) {
  std::vector<std::vector<double>> logprobs(items.size());
  std::vector<LossTerm> terms;
  terms.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    std::vector<TokenId> seq(it.prompt.begin(), it.prompt.end());
    seq.insert(seq.end(), it.completion.begin(), it.completion.end());
    const auto lp = policy.logprobs(seq);
    logprobs[i].assign(lp.begin() + static_cast<std::ptrdiff_t>(it.prompt.size()), lp.end());
    terms.push_back({logprobs[i], it.weights, it.completion, it.advantage});
  }
  return weighted_loss(terms);
}

GradientResult policy_loss_gradient(const Policy& policy, std::span<const PolicyLossItem> items,
                                    std::size_t grad_accum, std::size_t workers) {
  require(grad_accum >= 1, "grad_accum must be positive");
  std::size_t total_tokens = 0;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < items.size(); ++i) {
    require(items[i].weights.size() == items[i].completion.size(),
            "every completion token needs a weight");
    total_tokens += counted_tokens(items[i].completion);
    if (items[i].advantage != 0.0) active.push_back(i);
  }
  GradientResult out;
  out.grad.assign(policy.num_params(), 0.0);
  if (total_tokens == 0 || active.empty()) return out;
  const double inv_tokens = 1.0 / static_cast<double>(total_tokens);
  std::vector<double> values(active.size(), 0.0);
  // Micro-batches bound the number of live per-completion gradients; the
  // reduction order is fixed, so results do not depend on worker count.
  const std::size_t per_micro = (active.size() + grad_accum - 1) / grad_accum;
  for (std::size_t lo = 0; lo < active.size(); lo += per_micro) {
    const std::size_t hi = std::min(active.size(), lo + per_micro);
    std::vector<std::vector<double>> grads(hi - lo);
    parallel_for(hi - lo, workers, [&](std::size_t k) {
      const PolicyLossItem& it = items[active[lo + k]];
      std::vector<TokenId> seq(it.prompt.begin(), it.prompt.end());
      seq.insert(seq.end(), it.completion.begin(), it.completion.end());
      std::vector<double> coeff(seq.size(), 0.0);
      const std::size_t p = it.prompt.size();
      for (std::size_t t = 0; t < it.completion.size(); ++t)
        if (it.completion[t] != Tokenizer::kPad)
          coeff[p + t] = it.weights[t] * it.advantage * inv_tokens;
      grads[k].assign(policy.num_params(), 0.0);
      values[lo + k] = policy.accumulate_gradient(seq, coeff, grads[k]);
    });
    for (const auto& gk : grads)
      for (std::size_t q = 0; q < gk.size(); ++q) out.grad[q] += gk[q];
  }
  double objective = 0.0;
  for (double v : values) objective += v;
  // accumulate_gradient works on the objective; the loss is its negation.
  for (double& x : out.grad) x = -x;
  out.value = -objective;
  if (!std::isfinite(out.value) ||
      !std::ranges::all_of(out.grad, [](double x) { return std::isfinite(x); }))
    fail(ErrorCode::kNumeric, "non-finite loss or gradient");
  return out;
}

void TrainConfig::validate() const {
  require(group_size >= 2, "group size must be at least 2");
  require(batch_size >= 1, "batch size must be positive");
  require(grad_accum >= 1 && grad_accum <= batch_size,
          "grad_accum must be in [1, batch_size]");
  require(learning_rate > 0.0, "learning rate must be positive");
  require(eval_interval >= 1, "eval interval must be positive");
  require(spans.k_max >= 1, "k_max must be at least 1");
  sampler.validate();
  weight.validate();
}

bool same_counts(const StepMetrics& a, const StepMetrics& b) {
  StepMetrics x = a, y = b;
  x.times = y.times = PhaseTimes{};
  return x == y;
}

std::vector<const Problem*> step_batch(std::span<const Problem> problems,
                                       const TrainConfig& cfg, std::uint64_t step) {
  require(!problems.empty(), "no training problems");
  const std::size_t n = problems.size();
  std::vector<const Problem*> out;
  out.reserve(cfg.batch_size);
  std::uint64_t cached_epoch = static_cast<std::uint64_t>(-1);
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < cfg.batch_size; ++k) {
    const std::uint64_t flat = step * cfg.batch_size + k;
    const std::uint64_t epoch = flat / n;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(cfg.seed, "batch-order", epoch));
      for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(
                                    rng, 0, static_cast<std::int64_t>(i) - 1))]);
      cached_epoch = epoch;
    }
    out.push_back(&problems[order[flat % n]]);
  }
  return out;
}

StepResult train_step(Policy& policy, Adam& adam, WeightCache* cache, const Tokenizer& tok,
                      std::span<const Problem* const> batch, const TrainConfig& cfg,
                      std::uint64_t step) {
  cfg.validate();
  const auto t_start = Clock::now();
  const PassStats before = policy.stats();
  StepResult result;
  StepMetrics& m = result.metrics;
  m.step = step;
  const std::size_t B = batch.size(), G = cfg.group_size;
  result.groups.resize(B);

  // Generation.
  auto t0 = Clock::now();
  std::vector<std::string> prompts(B);
  std::vector<std::optional<Prefix>> prefixes(B);
  parallel_for(B, cfg.workers, [&](std::size_t i) {
    prompts[i] = prompt_text(*batch[i]);
    prefixes[i].emplace(prefill(policy, tok.tokenize(prompts[i]).token_ids));
  });
  for (std::size_t i = 0; i < B; ++i) {
    result.groups[i].problem = batch[i];
    result.groups[i].completions.resize(G);
  }
  parallel_for(B * G, cfg.workers, [&](std::size_t k) {
    const std::size_t i = k / G, j = k % G;
    const std::uint64_t seed = derive_seed(cfg.seed, "sample", step,
                                           static_cast<std::uint64_t>(batch[i]->id), j);
    const std::vector<TokenId> ids = sample(*prefixes[i], cfg.sampler, seed);
    result.groups[i].completions[j] = make_completion(tok, prompts[i], ids);
  });
  prefixes.clear();
  m.times.generation = seconds_since(t0);

  // Rewards, advantages and spans.
  t0 = Clock::now();
  double reward_sum = 0.0;
  for (auto& g : result.groups) {
    g.rewards.resize(G);
    g.spans.resize(G);
    for (std::size_t j = 0; j < G; ++j) {
      g.rewards[j] = reward(g.completions[j].text, g.problem->gold_answer);
      reward_sum += g.rewards[j];
      g.spans[j] = detect_spans(g.completions[j], cfg.spans);
      m.spans += g.spans[j].size();
      m.completion_tokens += g.completions[j].tokens.size();
    }
    g.advantages = group_advantages(g.rewards, cfg.advantage_epsilon, cfg.bessel);
  }
  m.groups = B;
  m.mean_reward = reward_sum / static_cast<double>(B * G);
  m.times.scoring = seconds_since(t0);

  // Importance estimation and weights.
  t0 = Clock::now();
  std::vector<bool> skip(B, false);
  for (std::size_t i = 0; i < B; ++i) {
    const auto& r = result.groups[i].rewards;
    const bool equal = std::ranges::all_of(r, [&](double x) { return x == r.front(); });
    skip[i] = equal && cfg.skip_uniform_groups;
    if (equal) ++m.skipped_groups;
    result.groups[i].estimates.resize(G);
  }
  parallel_for(B * G, cfg.workers, [&](std::size_t k) {
    const std::size_t i = k / G, j = k % G;
    auto& g = result.groups[i];
    WeightConfig wcfg = cfg.weight;
    wcfg.rng_seed = derive_seed(cfg.seed, "random-weights", step,
                                static_cast<std::uint64_t>(g.problem->id), j);
    g.estimates[j] = estimate_completion(policy, g.completions[j], g.spans[j], wcfg,
                                         cfg.use_cache ? cache : nullptr, skip[i]);
  });
  for (const auto& g : result.groups) {
    for (const auto& e : g.estimates) {
      m.cf_passes += e.forward_passes;
      if (e.cache_hit) ++m.cache_hits;
      if (e.forward_passes > 0) ++m.cache_misses;
    }
  }
  m.times.cf = seconds_since(t0);

  // Loss and update.
  t0 = Clock::now();
  std::vector<PolicyLossItem> items;
  for (const auto& g : result.groups)
    for (std::size_t j = 0; j < G; ++j) {
      const Completion& c = g.completions[j];
      items.push_back({c.prompt.token_ids, c.tokens.token_ids, g.estimates[j].weights.weights,
                       g.advantages[j]});
    }
  const bool signal = std::ranges::any_of(items, [](const auto& it) { return it.advantage != 0.0; });

  if (signal) {
    GradientResult lg = policy_loss_gradient(policy, items, cfg.grad_accum, cfg.workers);
    m.loss = lg.value;
    auto& total_grad = lg.grad;
    adam.set_learning_rate(cfg.learning_rate);
    m.grad_norm = adam.step(policy.mutable_params(), total_grad);
    m.updated = true;
    if (!policy.all_finite())
      fail(ErrorCode::kNumeric, "non-finite parameters after step " + std::to_string(step));
  }
  m.times.update = seconds_since(t0);

  const PassStats after = policy.stats();
  m.inference_passes = after.inference_passes - before.inference_passes;
  m.gradient_passes = after.gradient_passes - before.gradient_passes;
  m.decode_steps = after.decode_steps - before.decode_steps;
  m.times.total = seconds_since(t_start);
  return result;
}

}  // namespace cfcredit
