// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cfcredit/error.hpp"
#include "cfcredit/rng.hpp"

namespace cfcredit {
namespace {

using nlohmann::json;

struct Agent {
  std::string_view name;
  std::string_view subject;  // He / She
};

constexpr std::array<Agent, 8> kAgents{{{"Ann", "She"},
                                        {"Ben", "He"},
                                        {"Cal", "He"},
                                        {"Dee", "She"},
                                        {"Eva", "She"},
                                        {"Finn", "He"},
                                        {"Gus", "He"},
                                        {"Ivy", "She"}}};

constexpr std::array<std::string_view, 10> kItems{
    "pens", "cards", "eggs", "books", "coins",
    "beads", "cups", "nuts", "toys", "bats"};

constexpr std::array<std::string_view, 6> kContainers{"boxes", "bags",  "packs",
                                                      "jars",  "crates", "trays"};

struct Slots {
  Agent agent;
  std::string_view item;
  std::string_view container;
};

std::string fill(std::string_view pattern, const Slots& s, std::int64_t a,
                 std::int64_t b) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] != '{') {
      out += pattern[i];
      continue;
    }
    const auto close = pattern.find('}', i);
    const auto key = pattern.substr(i + 1, close - i - 1);
    if (key == "N") out += s.agent.name;
    else if (key == "P") out += s.agent.subject;
    else if (key == "I") out += s.item;
    else if (key == "C") out += s.container;
    else if (key == "a") out += std::to_string(a);
    else if (key == "b") out += std::to_string(b);
    i = close;
  }
  return out;
}

struct Template {
  ArithOp op;
  std::string_view text;
};

// Opening sentences combine two operands {a} and {b}.
constexpr std::array<Template, 9> kOpenings{{
    {ArithOp::kMul, "{N} has {a} {C} of {b} {I}."},
    {ArithOp::kMul, "{N} buys {a} {C} of {b} {I}."},
    {ArithOp::kAdd, "{N} has {a} {I} and finds {b}."},
    {ArithOp::kAdd, "{N} has {a} red and {b} blue {I}."},
    {ArithOp::kAdd, "{N} gets {a} {I}, then {b} more."},
    {ArithOp::kSub, "{N} has {a} {I} and loses {b}."},
    {ArithOp::kSub, "{N} had {a} {I} and sold {b}."},
    {ArithOp::kDiv, "{N} splits {a} {I} into {b} piles, keeps one."},
    {ArithOp::kDiv, "{N} packs {a} {I} in {b} {C}, keeps one."},
}};

// Follow-up sentences apply one operand {b} to the running amount.
constexpr std::array<Template, 10> kFollowUps{{
    {ArithOp::kAdd, "{P} buys {b} more."},
    {ArithOp::kAdd, "{P} gets {b} more."},
    {ArithOp::kSub, "{P} gives away {b}."},
    {ArithOp::kSub, "{P} uses {b}."},
    {ArithOp::kSub, "{P} eats {b}."},
    {ArithOp::kMul, "It grows {b} times."},
    {ArithOp::kMul, "{P} gets {b} times as many."},
    {ArithOp::kDiv, "{P} splits them into {b}, keeps one."},
    {ArithOp::kDiv, "{P} shares them among {b} {C}, keeps one."},
    {ArithOp::kAdd, "A friend adds {b}."},
}};

constexpr std::array<std::string_view, 2> kQuestions{"How many now?",
                                                     "How many are left?"};

constexpr std::int64_t kMinOperand = 2;
constexpr std::int64_t kMaxOperand = 99;
constexpr std::int64_t kMaxIntermediate = 9999;

std::int64_t apply(ArithOp op, std::int64_t a, std::int64_t b) {
  switch (op) {
    case ArithOp::kAdd: return a + b;
    case ArithOp::kSub: return a - b;
    case ArithOp::kMul: return a * b;
    case ArithOp::kDiv: return a / b;
  }
  return 0;
}

// Operand draws keep every value below kSoftCap so that the arithmetic facts
// stay few enough for a small model to learn.
constexpr std::int64_t kSoftCap = 60;

// Draws operands for an opening step. Returns false when the op cannot be
// realised; the caller then tries another template.
bool draw_opening(Rng& rng, ArithOp op, std::int64_t& a, std::int64_t& b) {
  switch (op) {
    case ArithOp::kMul:
      a = uniform_int(rng, 2, 9);
      b = uniform_int(rng, 2, 5);
      return true;
    case ArithOp::kAdd:
      a = uniform_int(rng, 2, 40);
      b = uniform_int(rng, 2, 9);
      return true;
    case ArithOp::kSub:
      a = uniform_int(rng, 12, 50);
      b = uniform_int(rng, 2, 9);
      return true;
    case ArithOp::kDiv: {
      b = uniform_int(rng, 2, 3);
      const std::int64_t q = uniform_int(rng, 2, 15);
      a = b * q;
      return true;
    }
  }
  return false;
}

bool draw_follow_up(Rng& rng, ArithOp op, std::int64_t prev, std::int64_t& b) {
  switch (op) {
    case ArithOp::kAdd:
      if (prev + 2 > kSoftCap) return false;
      b = uniform_int(rng, 2, std::min<std::int64_t>(9, kSoftCap - prev));
      return true;
    case ArithOp::kSub:
      if (prev < 4) return false;
      b = uniform_int(rng, 2, std::min<std::int64_t>(9, prev - 2));
      return true;
    case ArithOp::kMul:
      if (prev > 20) return false;
      b = uniform_int(rng, 2, 3);
      return true;
    case ArithOp::kDiv: {
      std::vector<std::int64_t> divisors;
      for (std::int64_t d = 2; d <= 3; ++d)
        if (prev % d == 0 && prev / d >= 2) divisors.push_back(d);
      if (divisors.empty()) return false;
      b = divisors[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<std::int64_t>(divisors.size()) - 1))];
      return true;
    }
  }
  return false;
}

template <typename T, std::size_t N>
const T& pick(Rng& rng, const std::array<T, N>& xs) {
  return xs[static_cast<std::size_t>(uniform_int(rng, 0, N - 1))];
}

bool in_operand_range(std::int64_t v) { return v >= kMinOperand && v <= kMaxOperand; }
bool in_intermediate_range(std::int64_t v) { return v >= 1 && v <= kMaxIntermediate; }

std::optional<std::int64_t> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

Problem generate_problem(std::uint64_t seed, int num_steps) {
  require(num_steps >= kMinSteps && num_steps <= kMaxSteps,
          "num_steps must be in [2, 4], got " + std::to_string(num_steps));
  Rng rng(derive_seed(seed, "problem"));
  for (;;) {
    Slots slots{pick(rng, kAgents), pick(rng, kItems), pick(rng, kContainers)};
    Problem p;
    p.seed = seed;
    p.num_steps = num_steps;
    std::string statement;
    bool ok = true;

    const Template& open = pick(rng, kOpenings);
    std::int64_t a = 0, b = 0;
    ok = draw_opening(rng, open.op, a, b);
    std::int64_t value = apply(open.op, a, b);
    ok = ok && in_operand_range(a) && in_operand_range(b) &&
         in_intermediate_range(value);
    if (!ok) continue;
    p.steps.push_back({a, open.op, b, value});
    statement += fill(open.text, slots, a, b);

    for (int s = 1; s < num_steps && ok; ++s) {
      const Template& next = pick(rng, kFollowUps);
      std::int64_t operand = 0;
      ok = draw_follow_up(rng, next.op, value, operand);
      if (!ok) break;
      const std::int64_t result = apply(next.op, value, operand);
      ok = in_operand_range(operand) && in_intermediate_range(result) &&
           (next.op != ArithOp::kDiv || value % operand == 0);
      if (!ok) break;
      p.steps.push_back({value, next.op, operand, result});
      statement += ' ';
      statement += fill(next.text, slots, 0, operand);
      value = result;
    }
    if (!ok) continue;

    statement += ' ';
    statement += fill(pick(rng, kQuestions), slots, 0, 0);
    p.statement = std::move(statement);
    p.gold_answer = value;
    return p;
  }
}

Trace make_trace(const Problem& problem) {
  Trace t;
  t.problem_id = problem.id;
  for (const Step& s : problem.steps) {
    t.reasoning_text += std::to_string(s.lhs) + ' ' + static_cast<char>(s.op) +
                        ' ' + std::to_string(s.rhs) + " = " +
                        std::to_string(s.result) + '\n';
  }
  t.answer_text = std::string(kAnswerMarker) + ' ' + std::to_string(problem.gold_answer);
  return t;
}

std::string prompt_text(const Problem& problem) { return problem.statement + '\n'; }

std::optional<std::int64_t> extract_answer(std::string_view text) {
  const auto pos = text.rfind(kAnswerMarker);
  if (pos == std::string_view::npos) return std::nullopt;
  std::string_view rest = text.substr(pos + kAnswerMarker.size());
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!rest.empty() && is_space(rest.front())) rest.remove_prefix(1);
  while (!rest.empty() && is_space(rest.back())) rest.remove_suffix(1);
  if (rest.size() > 19) return std::nullopt;
  return parse_int(rest);
}

int reward(std::string_view completion_text, std::int64_t gold) {
  const auto got = extract_answer(completion_text);
  return got.has_value() && *got == gold ? 1 : 0;
}

std::vector<std::string> corpus_vocabulary() {
  std::vector<std::string> words;
  auto add_words = [&](std::string_view text) {
    std::size_t i = 0;
    while (i < text.size()) {
      if (std::isalpha(static_cast<unsigned char>(text[i]))) {
        std::size_t j = i;
        while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
        words.emplace_back(text.substr(i, j - i));
        i = j;
      } else {
        ++i;
      }
    }
  };
  for (const auto& a : kAgents) {
    add_words(a.name);
    add_words(a.subject);
  }
  for (auto w : kItems) add_words(w);
  for (auto w : kContainers) add_words(w);
  for (const auto& t : kOpenings) add_words(t.text);
  for (const auto& t : kFollowUps) add_words(t.text);
  for (auto q : kQuestions) add_words(q);
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  // Placeholder keys are not words.
  std::erase_if(words, [](const std::string& w) {
    return w == "N" || w == "P" || w == "I" || w == "C" || w == "a" ||
           w == "b";
  });
  return words;
}

std::vector<DatasetEntry> generate_dataset(std::size_t n, std::uint64_t root_seed,
                                           int min_steps, int max_steps) {
  require(min_steps >= kMinSteps && max_steps <= kMaxSteps && min_steps <= max_steps,
          "invalid step range");
  std::vector<DatasetEntry> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t seed = derive_seed(root_seed, "corpus", i);
    Rng rng(derive_seed(seed, "steps"));
    const int steps = static_cast<int>(uniform_int(rng, min_steps, max_steps));
    Problem p = generate_problem(seed, steps);
    p.id = static_cast<std::int64_t>(i);
    Trace t = make_trace(p);
    out.push_back({std::move(p), std::move(t)});
  }
  return out;
}

std::vector<DatasetEntry> generate_heldout(std::size_t n, std::uint64_t root_seed,
                                           std::span<const DatasetEntry> exclude,
                                           int min_steps, int max_steps) {
  require(min_steps >= kMinSteps && max_steps <= kMaxSteps && min_steps <= max_steps,
          "invalid step range");
  std::unordered_set<std::string> seen;
  for (const auto& e : exclude) seen.insert(e.problem.statement);
  std::vector<DatasetEntry> out;
  out.reserve(n);
  for (std::uint64_t i = 0; out.size() < n; ++i) {
    require(i < 1000 * (n + 1), "cannot find enough held-out problems outside the training set");
    const std::uint64_t seed = derive_seed(root_seed, "heldout", i);
    Rng rng(derive_seed(seed, "steps"));
    const int steps = static_cast<int>(uniform_int(rng, min_steps, max_steps));
    Problem p = generate_problem(seed, steps);
    if (!seen.insert(p.statement).second) continue;
    p.id = kHeldoutIdBase + static_cast<std::int64_t>(out.size());
    Trace t = make_trace(p);
    out.push_back({std::move(p), std::move(t)});
  }
  return out;
}

std::string dataset_line(const DatasetEntry& e) {
  json j = {{"id", e.problem.id},
            {"statement", e.problem.statement},
            {"gold_answer", e.problem.gold_answer},
            {"num_steps", e.problem.num_steps},
            {"reasoning_text", e.trace.reasoning_text},
            {"answer_text", e.trace.answer_text},
            {"seed", e.problem.seed}};
  return j.dump();
}

void write_dataset(const std::filesystem::path& path,
                   const std::vector<DatasetEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  for (const auto& e : entries) out << dataset_line(e) << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open dataset " + path.string());
  std::vector<DatasetEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      DatasetEntry e;
      e.problem.id = j.at("id").get<std::int64_t>();
      e.problem.statement = j.at("statement").get<std::string>();
      e.problem.gold_answer = j.at("gold_answer").get<std::int64_t>();
      e.problem.seed = j.at("seed").get<std::uint64_t>();
      e.trace.problem_id = e.problem.id;
      e.trace.reasoning_text = j.at("reasoning_text").get<std::string>();
      e.trace.answer_text = j.at("answer_text").get<std::string>();
      std::istringstream lines(e.trace.reasoning_text);
      std::string l;
      while (std::getline(lines, l)) {
        Step s;
        char op = 0, eq = 0;
        std::istringstream ls(l);
        if (ls >> s.lhs >> op >> s.rhs >> eq >> s.result && eq == '=') {
          s.op = static_cast<ArithOp>(op);
          e.problem.steps.push_back(s);
        }
      }
      e.problem.num_steps = j.contains("num_steps")
                                ? j.at("num_steps").get<int>()
                                : static_cast<int>(e.problem.steps.size());
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace cfcredit
