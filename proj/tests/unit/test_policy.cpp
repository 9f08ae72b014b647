// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "cfcredit/checkpoint.hpp"
#include "cfcredit/corpus.hpp"
#include "cfcredit/error.hpp"
#include "cfcredit/policy.hpp"
#include "cfcredit/rng.hpp"
#include "cfcredit/warmstart.hpp"

using namespace cfcredit;

namespace {

ModelConfig small_config(std::size_t vocab = 40, bool zero_head = false) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 32;
  c.context = 64;
  c.init_std = 0.3;
  c.zero_output_head = zero_head;
  return c;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(uniform_int(rng, 4, static_cast<std::int64_t>(vocab) - 1));
  return out;
}

}  // namespace

TEST_CASE("fresh model with a zero head is uniform") {
  ModelConfig c;
  c.vocab_size = 120;
  const Policy p(c, 1);
  const auto lp = p.logprobs(std::vector<TokenId>{7});
  REQUIRE(lp.size() == 1);
  CHECK(lp[0] == doctest::Approx(std::log(1.0 / 120.0)).epsilon(1e-6));
}

TEST_CASE("every predictive distribution normalizes") {
  const Policy p(small_config(), 3);
  Rng rng(5);
  const auto seq = random_tokens(rng, 30, 40);
  const auto rows = p.log_distributions(seq);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    double s = 0.0;
    for (std::size_t v = 0; v < 40; ++v) s += std::exp(rows[t * 40 + v]);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("log-probabilities are causal") {
  const Policy p(small_config(), 4);
  Rng rng(6);
  auto seq = random_tokens(rng, 40, 40);
  const auto before = p.logprobs(seq);
  for (std::size_t t = 20; t < seq.size(); ++t) seq[t] = static_cast<TokenId>((seq[t] + 7) % 40);
  const auto after = p.logprobs(seq);
  for (std::size_t t = 0; t < 20; ++t) CHECK(before[t] == after[t]);
  bool changed = false;
  for (std::size_t t = 20; t < seq.size(); ++t) changed |= before[t] != after[t];
  CHECK(changed);
}

TEST_CASE("sequences longer than the context are rejected") {
  const Policy p(small_config(), 1);
  CHECK_THROWS_AS(p.logprobs(std::vector<TokenId>(65, 5)), Error);
  CHECK_NOTHROW(p.logprobs(std::vector<TokenId>(64, 5)));
}

TEST_CASE("incremental passes equal the full pass bit for bit") {
  const Policy p(small_config(), 8);
  Rng rng(9);
  const auto seq = random_tokens(rng, 30, 40);
  const auto full = p.log_distributions(seq);
  std::vector<TokenId> inputs{Tokenizer::kBos};
  inputs.insert(inputs.end(), seq.begin(), seq.end() - 1);
  InferenceState st(p);
  std::vector<double> rows;
  st.feed(std::span(inputs).subspan(0, 11), &rows);
  std::vector<double> got = rows;
  for (std::size_t t = 11; t < inputs.size(); ++t) {
    st.feed(std::span(inputs).subspan(t, 1), &rows);
    got.insert(got.end(), rows.begin(), rows.end());
  }
  REQUIRE(got.size() == full.size());
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < got.size(); ++i) mismatches += got[i] != full[i];
  CHECK(mismatches == 0);

  // Truncating and refeeding reproduces the same rows.
  st.truncate(15);
  st.feed(std::span(inputs).subspan(15, 5), &rows);
  for (std::size_t i = 0; i < 5 * 40; ++i) CHECK(rows[i] == full[15 * 40 + i]);
}

TEST_CASE("sampling is reproducible and greedy follows the argmax") {
  const Policy p(small_config(), 10);
  const std::vector<TokenId> prompt{5, 6, 7};
  SamplerConfig s;
  s.max_new_tokens = 20;
  CHECK(sample(p, prompt, s, 42) == sample(p, prompt, s, 42));

  SamplerConfig g;
  g.greedy = true;
  g.max_new_tokens = 12;
  const auto out = sample(p, prompt, g, 0);
  std::vector<TokenId> seq = prompt;
  for (TokenId tok : out) {
    // Row t of log_distributions predicts entry t, so append a placeholder.
    std::vector<TokenId> probe = seq;
    probe.push_back(0);
    const auto rows = p.log_distributions(probe);
    const double* last = rows.data() + seq.size() * 40;
    std::size_t best = 0;
    for (std::size_t v = 1; v < 40; ++v)
      if (last[v] > last[best]) best = v;
    CHECK(static_cast<TokenId>(best) == tok);
    seq.push_back(tok);
  }
  CHECK((out.size() == 12 || out.back() == Tokenizer::kEos));
}

TEST_CASE("temperature 1 and top-p 1 sample the model distribution") {
  const Policy p(small_config(8), 11);
  const std::vector<TokenId> prompt{4, 5};
  const auto rows = p.log_distributions(std::vector<TokenId>{4, 5, 0});
  SamplerConfig s;
  s.temperature = 1.0;
  s.top_p = 1.0;
  s.max_new_tokens = 1;
  const int n = 20000;
  std::vector<int> counts(8, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample(p, prompt, s, static_cast<std::uint64_t>(i))[0])];
  for (std::size_t v = 0; v < 8; ++v) {
    const double q = std::exp(rows[16 + v]);
    const double sd = std::sqrt(q * (1 - q) / n);
    CHECK(std::abs(counts[v] / static_cast<double>(n) - q) < 5 * sd + 1e-9);
  }
}

TEST_CASE("gradient matches central finite differences on 64 coordinates") {
  Policy p(small_config(), 12);
  Rng rng(13);
  LogprobObjective obj;
  for (int k = 0; k < 3; ++k) {
    LogprobTerm term;
    term.tokens = random_tokens(rng, 12 + 3 * static_cast<std::size_t>(k), 40);
    for (std::size_t t = 0; t < term.tokens.size(); ++t) term.coeff.push_back(uniform01(rng) - 0.5);
    obj.terms.push_back(term);
  }
  const auto g = gradient(p, obj);
  CHECK(g.value == doctest::Approx(evaluate(p, obj)).epsilon(1e-12));
  double worst = 0.0;
  for (int k = 0; k < 64; ++k) {
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(p.num_params()) - 1));
    auto params = p.mutable_params();
    const double orig = params[i];
    const double h = 1e-5;
    params[i] = orig + h;
    const double up = evaluate(p, obj);
    params[i] = orig - h;
    const double down = evaluate(p, obj);
    params[i] = orig;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(fd - g.grad[i]) / std::max(1e-8, std::abs(fd) + std::abs(g.grad[i]));
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient is linear in the objective and zero for a constant") {
  const Policy p(small_config(), 14);
  Rng rng(15);
  LogprobObjective obj;
  obj.terms.push_back({random_tokens(rng, 10, 40), std::vector<double>(10, 0.0)});
  obj.constant = 3.0;
  for (double x : gradient(p, obj).grad) CHECK(x == 0.0);
  obj.terms[0].coeff.assign(10, 0.25);
  const auto g1 = gradient(p, obj);
  obj.terms[0].coeff.assign(10, 0.5);
  const auto g2 = gradient(p, obj);
  for (std::size_t i = 0; i < g1.grad.size(); ++i)
    CHECK(g2.grad[i] == doctest::Approx(2 * g1.grad[i]).epsilon(1e-12));
}

TEST_CASE("checkpoints reproduce log-probabilities bit for bit") {
  const Policy p(small_config(), 16);
  const auto dir = std::filesystem::temp_directory_path() / "cfcredit_policy_test";
  std::filesystem::create_directories(dir);
  save_policy(dir / "p.ckpt", p, TokenizerKind::kWord);
  const auto loaded = load_policy(dir / "p.ckpt");
  CHECK(loaded.tokenizer == TokenizerKind::kWord);
  CHECK(loaded.policy.config() == p.config());
  CHECK(loaded.policy.fingerprint() == p.fingerprint());
  Rng rng(17);
  const auto seq = random_tokens(rng, 25, 40);
  CHECK(loaded.policy.logprobs(seq) == p.logprobs(seq));
  CHECK_THROWS_AS(read_archive(dir / "p.ckpt", "arm-state"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("warm start with zero epochs leaves the policy untouched") {
  const Tokenizer tok(TokenizerKind::kWord);
  ModelConfig c;
  c.vocab_size = tok.vocab_size();
  Policy p(c, 1);
  const auto before = p.fingerprint();
  WarmstartConfig w;
  w.epochs = 0;
  const auto data = generate_dataset(4, 1);
  warmstart(p, tok, data, w);
  CHECK(p.fingerprint() == before);
}

TEST_CASE("warm start memorizes a single trace") {
  const Tokenizer tok(TokenizerKind::kWord);
  ModelConfig c;
  c.vocab_size = tok.vocab_size();
  Policy p(c, 2);
  const auto data = generate_dataset(1, 5);
  WarmstartConfig w;
  w.epochs = 300;
  w.batch_size = 1;
  w.warmup_updates = 10;
  w.adam.learning_rate = 3e-3;
  const double before = completion_cross_entropy(p, tok, data);
  warmstart(p, tok, data, w);
  const double after = completion_cross_entropy(p, tok, data);
  MESSAGE("single-trace cross-entropy " << before << " -> " << after << " nats/token");
  CHECK(after < 0.01);
  CHECK(greedy_accuracy(p, tok, data) == 1.0);
}

TEST_CASE("accuracy gate reports the measured value") {
  CHECK_NOTHROW(check_gate(0.31, 0.30));
  try {
    check_gate(0.125, 0.30);
    FAIL("gate should fail");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kGate);
    CHECK(std::string(e.what()).find("0.125") != std::string::npos);
  }
}
