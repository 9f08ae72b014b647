// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfcredit {

enum class ArithOp : char { kAdd = '+', kSub = '-', kMul = '*', kDiv = '/' };

struct Step {
  std::int64_t lhs = 0;
  ArithOp op = ArithOp::kAdd;
  std::int64_t rhs = 0;
  std::int64_t result = 0;
};

struct Problem {
  std::int64_t id = 0;
  std::string statement;
  std::int64_t gold_answer = 0;
  int num_steps = 0;
  std::uint64_t seed = 0;
  std::vector<Step> steps;  // hidden derivation, in order
};

struct Trace {
  std::int64_t problem_id = 0;
  std::string reasoning_text;  // one "a OP b = c" line per step
  std::string answer_text;     // "#### <gold>"
};

inline constexpr std::string_view kAnswerMarker = "####";
inline constexpr int kMinSteps = 2;
inline constexpr int kMaxSteps = 4;

Problem generate_problem(std::uint64_t seed, int num_steps);
Trace make_trace(const Problem& problem);

// Prompt the policy is conditioned on.
std::string prompt_text(const Problem& problem);

std::optional<std::int64_t> extract_answer(std::string_view completion_text);
int reward(std::string_view completion_text, std::int64_t gold);

// Words used by the template bank (word-level tokenizer vocabulary).
std::vector<std::string> corpus_vocabulary();

struct DatasetEntry {
  Problem problem;
  Trace trace;
};

// Problem i uses seed derive_seed(root_seed, "corpus", i) and a step count
// drawn uniformly from [min_steps, max_steps].
std::vector<DatasetEntry> generate_dataset(std::size_t n, std::uint64_t root_seed,
                                           int min_steps = kMinSteps,
                                           int max_steps = kMaxSteps);

// Problems whose statements do not occur in `exclude`, with ids starting at
// kHeldoutIdBase. Seeds come from a stream separate from generate_dataset.
inline constexpr std::int64_t kHeldoutIdBase = 1000000;
std::vector<DatasetEntry> generate_heldout(std::size_t n, std::uint64_t root_seed,
                                           std::span<const DatasetEntry> exclude,
                                           int min_steps = kMinSteps,
                                           int max_steps = kMaxSteps);

std::string dataset_line(const DatasetEntry& entry);
void write_dataset(const std::filesystem::path& path,
                   const std::vector<DatasetEntry>& entries);
std::vector<DatasetEntry> read_dataset(const std::filesystem::path& path);

}  // namespace cfcredit
