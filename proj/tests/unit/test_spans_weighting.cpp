// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "cfcredit/completion.hpp"
#include "cfcredit/error.hpp"
#include "cfcredit/rng.hpp"
#include "cfcredit/spans.hpp"
#include "cfcredit/weighting.hpp"

using namespace cfcredit;

namespace {

const Tokenizer& word_tok() {
  static const Tokenizer tok(TokenizerKind::kWord);
  return tok;
}

// A completion of n tokens whose answer starts at `boundary`, with spans
// over the given token ranges.
TokenizedSequence plain_sequence(std::size_t n, std::size_t boundary) {
  TokenizedSequence seq;
  seq.token_ids.assign(n, 7);
  for (std::size_t i = 0; i < n; ++i) seq.char_offsets.push_back({i, i + 1});
  seq.boundary = boundary;
  return seq;
}

std::vector<Span> spans_at(std::initializer_list<TokenRange> ranges) {
  std::vector<Span> out;
  for (TokenRange r : ranges) {
    Span s;
    s.token_range = r;
    s.char_range = {r.start, r.end};
    s.kind = SpanKind::kArithmetic;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("a single equation is one arithmetic span") {
  const Completion c = make_completion(word_tok(), "p", "23 + 45 = 68\n#### 68", true);
  const auto spans = detect_spans(c);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0].kind == SpanKind::kArithmetic);
  CHECK(spans[0].text == "23 + 45 = 68");
  CHECK(spans[0].token_range.start == 0);
  CHECK(spans[0].token_range.end <= c.tokens.boundary);
}

TEST_CASE("k_max keeps the first spans in order") {
  std::string text;
  for (int i = 0; i < 14; ++i)
    text += std::to_string(10 + i) + " + 2 = " + std::to_string(12 + i) + "\n";
  text += "#### 25";
  const Completion c = make_completion(word_tok(), "p", text, true);
  CHECK(detect_spans(c, {.k_max = 20}).size() == 14);
  const auto spans = detect_spans(c, {.k_max = 10});
  REQUIRE(spans.size() == 10);
  for (int i = 0; i < 10; ++i)
    CHECK(spans[static_cast<std::size_t>(i)].text ==
          std::to_string(10 + i) + " + 2 = " + std::to_string(12 + i));
}

TEST_CASE("longest selection keeps the widest spans in text order") {
  const std::string text = "2 + 3 = 5\n11 * 12 = 132\n4 - 1 = 3\n45 + 45 + 10 = 100\n#### 100";
  const Completion c = make_completion(Tokenizer(TokenizerKind::kCharacter), "p", text, true);
  const auto spans = detect_spans(c, {.k_max = 2, .selection = SpanSelection::kLongest});
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].text == "11 * 12 = 132");
  CHECK(spans[1].text == "45 + 45 + 10 = 100");
}

TEST_CASE("chained equalities and prose sentences") {
  const Tokenizer ch(TokenizerKind::kCharacter);
  const std::string text =
      "Step 1: Calculate the total miles. 3 * 4 = 12 = 12. So she has 12 left.\n#### 12";
  const Completion c = make_completion(ch, "p", text, true);
  const auto spans = detect_spans(c, {.k_max = 10});
  REQUIRE(spans.size() == 3);
  CHECK(spans[0].kind == SpanKind::kSentence);
  CHECK(spans[0].text == "Step 1: Calculate the total miles.");
  CHECK(spans[1].kind == SpanKind::kCalcChain);
  CHECK(spans[1].text == "3 * 4 = 12 = 12");
  CHECK(spans[2].kind == SpanKind::kSentence);
  CHECK(spans[2].text == "So she has 12 left.");
}

TEST_CASE("spans never overlap and never reach the answer") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const int lines = static_cast<int>(uniform_int(rng, 1, 8));
    for (int i = 0; i < lines; ++i) {
      const auto a = uniform_int(rng, 2, 99), b = uniform_int(rng, 2, 99);
      text += std::to_string(a) + " + " + std::to_string(b) + " = " + std::to_string(a + b);
      text += uniform01(rng) < 0.3 ? ". Then we continue.\n" : "\n";
    }
    text += "#### " + std::to_string(uniform_int(rng, 1, 500));
    for (auto kind : {TokenizerKind::kWord, TokenizerKind::kCharacter}) {
      const Completion c = make_completion(Tokenizer(kind), "p", text, true);
      const auto spans = detect_spans(c, {.k_max = 20});
      std::size_t prev = 0;
      for (const auto& s : spans) {
        CHECK(!s.token_range.empty());
        CHECK(s.token_range.start >= prev);
        CHECK(s.token_range.end <= c.tokens.boundary);
        prev = s.token_range.end;
      }
    }
  }
}

TEST_CASE("pattern labels") {
  const auto a = classify_pattern("1/6 \xC3\x97 36 = 6");
  CHECK(a.mul_div);
  CHECK(a.proportion_rate);
  CHECK_FALSE(a.calc_chain);

  const auto b = classify_pattern("Step 1: Calculate the total miles");
  CHECK(b.step_header);
  CHECK(b.total_sum);
  CHECK_FALSE(b.mul_div);

  CHECK(classify_pattern("4 + 5 = 9 = 9").calc_chain);
  CHECK(classify_pattern("2 + 3 + 4 = 9").total_sum);
  CHECK(classify_pattern("Therefore the answer is 9.").conclusion);
  CHECK_FALSE(classify_pattern("Someone said hi").conclusion);
  CHECK(classify_pattern("Let x be the cost").equation_setup);
  CHECK(classify_pattern("She earns 5 dollars per hour").proportion_rate);
  CHECK(classify_pattern("23 + 45 = 68") == PatternLabels{});

  const auto names = label_names(a);
  CHECK(labels_from_names(names) == a);
  CHECK_THROWS_AS(pattern_label_from_string("bogus"), Error);
}

TEST_CASE("normalized importances span [0, 1]") {
  const std::vector<double> imp{100, 400, 250};
  const auto n = normalize(imp, 1e-8);
  CHECK(n[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(n[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(n[2] == doctest::Approx(0.5).epsilon(1e-9));
  const std::vector<double> flat{3, 3};
  for (double x : normalize(flat, 1e-8)) CHECK(x == 0.0);
  CHECK_THROWS_AS(normalize(std::vector<double>{}, 1e-8), Error);
}

TEST_CASE("counterfactual and inverted weights") {
  const auto seq = plain_sequence(8, 6);
  const auto spans = spans_at({{0, 2}, {2, 4}, {4, 6}});
  const std::vector<double> imp{100, 400, 250};
  WeightConfig cfg;

  const auto cf = assign_weights(spans, imp, cfg, seq);
  const std::vector<double> want_cf{0.5, 0.5, 4.0, 4.0, 2.25, 2.25, 1.5, 1.5};
  for (std::size_t t = 0; t < 8; ++t) CHECK(cf.weights[t] == doctest::Approx(want_cf[t]).epsilon(1e-7));
  CHECK(cf.provenance == std::vector<int>{0, 0, 1, 1, 2, 2, -1, -1});

  cfg.mode = WeightMode::kInverted;
  const auto inv = assign_weights(spans, imp, cfg, seq);
  const std::vector<double> want_inv{4.0, 4.0, 0.5, 0.5, 2.25, 2.25, 1.5, 1.5};
  for (std::size_t t = 0; t < 8; ++t) CHECK(inv.weights[t] == doctest::Approx(want_inv[t]).epsilon(1e-7));
}

TEST_CASE("uniform weights are one unless the answer boost is requested") {
  const auto seq = plain_sequence(6, 4);
  const auto spans = spans_at({{0, 2}});
  WeightConfig cfg;
  cfg.mode = WeightMode::kUniform;
  for (double w : assign_weights(spans, std::vector<double>{5.0}, cfg, seq).weights) CHECK(w == 1.0);
  cfg.uniform_answer_boost = true;
  const auto boosted = assign_weights(spans, std::vector<double>{5.0}, cfg, seq).weights;
  CHECK(boosted == std::vector<double>{1, 1, 1, 1, 1.5, 1.5});
}

TEST_CASE("tokens outside spans keep unit weight") {
  const auto seq = plain_sequence(10, 8);
  const auto spans = spans_at({{1, 3}, {5, 6}});
  WeightConfig cfg;
  const auto w = assign_weights(spans, std::vector<double>{1.0, 2.0}, cfg, seq);
  for (std::size_t t : {0u, 3u, 4u, 6u, 7u}) {
    CHECK(w.weights[t] == 1.0);
    CHECK(w.provenance[t] == -1);
    CHECK(w.normalized[t] == 0.0);
  }
}

TEST_CASE("weight properties over random importances") {
  Rng rng(11);
  WeightConfig cf;
  WeightConfig inv;
  inv.mode = WeightMode::kInverted;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = static_cast<std::size_t>(uniform_int(rng, 1, 10));
    std::vector<Span> spans;
    std::vector<double> imp;
    for (std::size_t i = 0; i < k; ++i) {
      Span s;
      s.token_range = {2 * i, 2 * i + 2};
      spans.push_back(s);
      imp.push_back(uniform01(rng) * 200.0 - 100.0);
    }
    const auto seq = plain_sequence(2 * k + 3, 2 * k);
    const auto a = assign_weights(spans, imp, cf, seq);
    const auto b = assign_weights(spans, imp, inv, seq);
    for (std::size_t t = 0; t < 2 * k; ++t) {
      CHECK(a.weights[t] >= cf.w_min);
      CHECK(a.weights[t] <= cf.w_max);
      CHECK(a.weights[t] + b.weights[t] == doctest::Approx(cf.w_min + cf.w_max).epsilon(1e-12));
    }
    for (std::size_t t = 2 * k; t < seq.size(); ++t) {
      CHECK(a.weights[t] == cf.w_ans);
      CHECK(b.weights[t] == cf.w_ans);
    }
    // Weights follow the importance order.
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (imp[i] < imp[j]) {
          CHECK(a.weights[2 * i] <= a.weights[2 * j]);
          CHECK(b.weights[2 * i] >= b.weights[2 * j]);
        }
  }
}

TEST_CASE("random weights are seeded and stay in range") {
  const auto seq = plain_sequence(40, 36);
  WeightConfig cfg;
  cfg.mode = WeightMode::kRandom;
  cfg.rng_seed = 5;
  const auto a = assign_weights({}, {}, cfg, seq);
  CHECK(a == assign_weights({}, {}, cfg, seq));
  for (std::size_t t = 0; t < 36; ++t) {
    CHECK(a.weights[t] >= 0.5);
    CHECK(a.weights[t] <= 4.0);
  }
  for (std::size_t t = 36; t < 40; ++t) CHECK(a.weights[t] == 1.5);
  cfg.rng_seed = 6;
  CHECK(assign_weights({}, {}, cfg, seq).weights != a.weights);
}

TEST_CASE("weight configuration and mode names") {
  WeightConfig bad;
  bad.w_min = 5.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(weight_mode_from_string("cf") == WeightMode::kCounterfactual);
  CHECK(weight_mode_from_string("inverted") == WeightMode::kInverted);
  CHECK(to_string(WeightMode::kRandom) == "random");
  CHECK_THROWS_AS(weight_mode_from_string("nope"), Error);
  const auto seq = plain_sequence(4, 4);
  CHECK_THROWS_AS(assign_weights(spans_at({{0, 2}}), std::vector<double>{}, WeightConfig{}, seq), Error);
  CHECK_THROWS_AS(assign_weights(spans_at({{0, 6}}), std::vector<double>{1.0}, WeightConfig{}, seq), Error);
}
