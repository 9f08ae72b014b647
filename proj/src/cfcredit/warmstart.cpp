// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/warmstart.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "cfcredit/error.hpp"
#include "cfcredit/parallel.hpp"
#include "cfcredit/rng.hpp"

namespace cfcredit {

TrainingExample encode_example(const Tokenizer& tok, const DatasetEntry& entry) {
  TrainingExample ex;
  ex.tokens = tok.tokenize(prompt_text(entry.problem)).token_ids;
  ex.prompt_length = ex.tokens.size();
  const auto completion =
      tok.tokenize(entry.trace.reasoning_text + entry.trace.answer_text).token_ids;
  ex.tokens.insert(ex.tokens.end(), completion.begin(), completion.end());
  ex.tokens.push_back(Tokenizer::kEos);
  return ex;
}

double completion_cross_entropy(const Policy& policy, const Tokenizer& tok,
                                std::span<const DatasetEntry> data) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& e : data) {
    const TrainingExample ex = encode_example(tok, e);
    const auto lp = policy.logprobs(ex.tokens);
    for (std::size_t t = ex.prompt_length; t < lp.size(); ++t) total -= lp[t];
    count += lp.size() - ex.prompt_length;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

WarmstartReport warmstart(Policy& policy, const Tokenizer& tok,
                          std::span<const DatasetEntry> data, const WarmstartConfig& cfg) {
  WarmstartReport report;
  if (cfg.epochs == 0 || data.empty()) return report;
  require(cfg.batch_size > 0, "warm-start batch size must be positive");

  std::vector<TrainingExample> examples;
  examples.reserve(data.size());
  for (const auto& e : data) examples.push_back(encode_example(tok, e));

  Adam adam(cfg.adam, policy.num_params());
  const std::size_t batches_per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_updates = batches_per_epoch * cfg.epochs;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, "warmstart"));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_nats = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, examples.size());
      std::size_t n_tokens = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& ex = examples[order[i]];
        n_tokens += ex.tokens.size() - ex.prompt_length;
      }
      LogprobObjective obj;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& ex = examples[order[i]];
        LogprobTerm term{ex.tokens, std::vector<double>(ex.tokens.size(), 0.0)};
        for (std::size_t t = ex.prompt_length; t < ex.tokens.size(); ++t)
          term.coeff[t] = 1.0 / static_cast<double>(n_tokens);
        obj.terms.push_back(std::move(term));
      }
      // Maximise mean log-likelihood: descend on its negation.
      GradientResult g = gradient(policy, obj);
      for (double& x : g.grad) x = -x;
      const double progress =
          static_cast<double>(report.updates) / static_cast<double>(total_updates);
      double lr_scale = cfg.final_lr_fraction +
                        (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(M_PI * progress));
      if (report.updates < cfg.warmup_updates)
        lr_scale *= static_cast<double>(report.updates + 1) /
                    static_cast<double>(cfg.warmup_updates);
      adam.set_learning_rate(cfg.adam.learning_rate * lr_scale);
      adam.step(policy.mutable_params(), g.grad);
      ++report.updates;
      epoch_nats += -g.value * static_cast<double>(n_tokens);
      epoch_tokens += n_tokens;
    }
    report.epoch_loss.push_back(epoch_nats / static_cast<double>(epoch_tokens));
    spdlog::info("warmstart epoch {}/{}: {:.4f} nats/token", epoch + 1, cfg.epochs,
                 report.epoch_loss.back());
  }
  if (!policy.all_finite()) fail(ErrorCode::kNumeric, "warm start produced non-finite parameters");
  return report;
}

double greedy_accuracy(const Policy& policy, const Tokenizer& tok,
                       std::span<const DatasetEntry> problems, std::size_t max_new_tokens,
                       std::size_t workers) {
  if (problems.empty()) return 0.0;
  SamplerConfig greedy{.temperature = 1.0, .top_p = 1.0, .max_new_tokens = max_new_tokens,
                       .greedy = true};
  std::vector<int> correct(problems.size(), 0);
  parallel_for(problems.size(), workers, [&](std::size_t i) {
    const auto prompt = tok.tokenize(prompt_text(problems[i].problem)).token_ids;
    const auto out = sample(policy, prompt, greedy, 0);
    correct[i] = reward(tok.detokenize(out), problems[i].problem.gold_answer);
  });
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) /
         static_cast<double>(problems.size());
}

void check_gate(double accuracy, double threshold) {
  if (accuracy < threshold)
    fail(ErrorCode::kGate, "warm-start gate failed: held-out greedy accuracy " +
                               std::to_string(accuracy) + " < required " +
                               std::to_string(threshold));
}

}  // namespace cfcredit
