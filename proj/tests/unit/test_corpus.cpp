// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <string>

#include "cfcredit/corpus.hpp"
#include "cfcredit/error.hpp"
#include "cfcredit/tokenizer.hpp"

using namespace cfcredit;

namespace {

// Independent evaluator for one hidden step.
std::int64_t eval_step(const Step& s) {
  switch (s.op) {
    case ArithOp::kAdd: return s.lhs + s.rhs;
    case ArithOp::kSub: return s.lhs - s.rhs;
    case ArithOp::kMul: return s.lhs * s.rhs;
    case ArithOp::kDiv: return s.rhs != 0 && s.lhs % s.rhs == 0 ? s.lhs / s.rhs : -1;
  }
  return -1;
}

}  // namespace

TEST_CASE("generate_problem is deterministic per seed") {
  const Problem a = generate_problem(7, 2);
  const Problem b = generate_problem(7, 2);
  CHECK(a.statement == b.statement);
  CHECK(a.gold_answer == b.gold_answer);
  CHECK(a.steps.size() == 2);
  CHECK(generate_problem(8, 2).statement != a.statement);
}

TEST_CASE("generate_problem rejects step counts outside [2, 4]") {
  CHECK_THROWS_AS(generate_problem(1, 5), Error);
  CHECK_THROWS_AS(generate_problem(1, 1), Error);
}

TEST_CASE("hidden steps reproduce the gold answer for 10000 seeds") {
  int bad = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const int n = 2 + static_cast<int>(seed % 3);
    const Problem p = generate_problem(seed, n);
    bool ok = static_cast<int>(p.steps.size()) == n;
    std::int64_t value = 0;
    for (std::size_t k = 0; k < p.steps.size() && ok; ++k) {
      const Step& s = p.steps[k];
      if (k > 0) ok = ok && s.lhs == value;
      value = eval_step(s);
      ok = ok && value == s.result && s.rhs >= 2 && s.rhs <= 99 && value >= 1 && value <= 9999;
      // Every operand drawn for the problem is stated in it.
      ok = ok && p.statement.find(std::to_string(s.rhs)) != std::string::npos;
      if (k == 0) ok = ok && p.statement.find(std::to_string(s.lhs)) != std::string::npos;
    }
    ok = ok && value == p.gold_answer;
    bad += !ok;
  }
  CHECK(bad == 0);
}

TEST_CASE("trace of 12 x 5 - 14 ends at 46") {
  Problem p;
  p.steps = {{12, ArithOp::kMul, 5, eval_step({12, ArithOp::kMul, 5, 0})}};
  p.steps.push_back({60, ArithOp::kSub, 14, eval_step({60, ArithOp::kSub, 14, 0})});
  p.gold_answer = p.steps.back().result;
  CHECK(p.gold_answer == 46);
  const Trace t = make_trace(p);
  CHECK(t.reasoning_text == "12 * 5 = 60\n60 - 14 = 46\n");
  CHECK(t.answer_text == "#### 46");
  CHECK(reward(t.reasoning_text + t.answer_text, 46) == 1);
}

TEST_CASE("extract_answer reads the integer after the last marker") {
  CHECK(extract_answer("Final: 36 - 10 + 2 = 28\n#### 28") == 28);
  CHECK_FALSE(extract_answer("no marker here").has_value());
  CHECK(extract_answer("#### -3") == -3);
  CHECK(extract_answer("#### 5\n#### 7") == 7);
  CHECK_FALSE(extract_answer("#### ").has_value());
  CHECK_FALSE(extract_answer("#### x").has_value());
}

TEST_CASE("reward is exact match") {
  CHECK(reward("#### 28", 28) == 1);
  CHECK(reward("#### 27", 28) == 0);
  CHECK(reward("garbled", 28) == 0);
  CHECK(reward("#### 1\n#### 28", 28) == 1);
  CHECK(reward("#### 28", 28) == reward("#### 28", 28));
}

TEST_CASE("tokenizer round trip and offsets") {
  for (auto kind : {TokenizerKind::kCharacter, TokenizerKind::kWord}) {
    const Tokenizer tok(kind);
    CHECK(tok.vocab_size() <= Tokenizer::kMaxVocab);
    CHECK(tok.symbol(Tokenizer::kPad) == "<pad>");
    CHECK(tok.tokenize("").token_ids.empty());
    const auto ab = tok.tokenize("ab cd");
    std::size_t at = 0;
    for (const auto& r : ab.char_offsets) {
      CHECK(r.start == at);
      CHECK(r.end > r.start);
      at = r.end;
    }
    CHECK(at == 5);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const Problem p = generate_problem(seed, 2 + static_cast<int>(seed % 3));
      const Trace t = make_trace(p);
      for (const std::string& text : {prompt_text(p), t.reasoning_text + t.answer_text}) {
        const auto seq = tok.tokenize(text);
        CHECK(tok.detokenize(seq.token_ids) == text);
        CHECK(seq.char_offsets.size() == seq.token_ids.size());
      }
    }
  }
}

TEST_CASE("unknown symbols map to UNK") {
  const Tokenizer tok;
  const auto seq = tok.tokenize("a\xC3\xA9z");
  REQUIRE(seq.token_ids.size() == 3);
  CHECK(seq.token_ids[1] == Tokenizer::kUnk);
  CHECK(seq.char_offsets[1].start == 1);
  CHECK(seq.char_offsets[1].end == 3);
}

TEST_CASE("word mode reads two-digit numerals as one token") {
  const Tokenizer tok(TokenizerKind::kWord);
  CHECK(tok.tokenize("46").token_ids.size() == 1);
  CHECK(tok.tokenize("7").token_ids.size() == 1);
  CHECK(tok.tokenize("100").token_ids.size() == 3);
  CHECK(tok.tokenize("05").token_ids.size() == 2);
  CHECK(tok.detokenize(tok.tokenize("12 * 5 = 60").token_ids) == "12 * 5 = 60");
}

TEST_CASE("datasets are deterministic and round-trip through JSON lines") {
  const auto a = generate_dataset(50, 3);
  const auto b = generate_dataset(50, 3);
  REQUIRE(a.size() == 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(dataset_line(a[i]) == dataset_line(b[i]));
    CHECK(a[i].problem.num_steps >= kMinSteps);
    CHECK(a[i].problem.num_steps <= kMaxSteps);
  }
  const auto dir = std::filesystem::temp_directory_path() / "cfcredit_corpus_test";
  std::filesystem::create_directories(dir);
  write_dataset(dir / "d.jsonl", a);
  const auto back = read_dataset(dir / "d.jsonl");
  REQUIRE(back.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(dataset_line(back[i]) == dataset_line(a[i]));
  write_dataset(dir / "empty.jsonl", {});
  CHECK(read_dataset(dir / "empty.jsonl").empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("held-out problems avoid training statements") {
  const auto train = generate_dataset(300, 1);
  const auto held = generate_heldout(100, 1, train);
  REQUIRE(held.size() == 100);
  for (const auto& h : held) {
    CHECK(h.problem.id >= kHeldoutIdBase);
    for (const auto& t : train) CHECK(h.problem.statement != t.problem.statement);
  }
}
