// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON-lines logs of spans, weights and importance traces.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfcredit/spans.hpp"
#include "cfcredit/trainer.hpp"
#include "cfcredit/weighting.hpp"

namespace cfcredit {

struct SpanDumpSpan {
  int span_id = 0;
  CharRange char_range;
  TokenRange token_range;
  SpanKind kind = SpanKind::kSentence;
  std::string text;
  PatternLabels labels;
  std::optional<double> drop;        // absent when not estimated
  std::optional<double> normalized;  // normalized importance, when known
};

struct SpanDumpEntry {
  std::string completion_id;
  std::uint64_t step = 0;
  std::string prompt;
  std::string text;
  int reward = 0;
  std::size_t reasoning_tokens = 0;
  std::size_t completion_tokens = 0;
  bool skipped = false;
  bool cache_hit = false;
  std::vector<SpanDumpSpan> spans;
};

struct WeightDumpEntry {
  std::string completion_id;
  std::uint64_t step = 0;
  WeightMode mode = WeightMode::kUniform;
  std::vector<double> weights;
  std::vector<int> span_provenance;
  std::vector<double> normalized;
};

struct CfTraceEntry {
  std::string completion_id;
  std::uint64_t step = 0;
  int span_id = -1;
  std::optional<double> drop;
  std::optional<double> importance;
  bool skipped = false;
  bool cache_hit = false;
};

nlohmann::json to_json(const SpanDumpEntry& e);
nlohmann::json to_json(const WeightDumpEntry& e);
nlohmann::json to_json(const CfTraceEntry& e);
SpanDumpEntry span_entry_from_json(const nlohmann::json& j);
WeightDumpEntry weight_entry_from_json(const nlohmann::json& j);
CfTraceEntry cf_trace_from_json(const nlohmann::json& j);

// Reads every line as a record. A malformed line raises kParse naming the
// file and its 1-based line number. Blank lines are skipped.
std::vector<SpanDumpEntry> read_span_dump(const std::filesystem::path& path);
std::vector<WeightDumpEntry> read_weight_dump(const std::filesystem::path& path);
std::vector<CfTraceEntry> read_cf_trace(const std::filesystem::path& path);

std::string completion_id(std::uint64_t step, std::int64_t problem_id, std::size_t index);

// Records for every completion of one step.
struct StepDump {
  std::vector<SpanDumpEntry> spans;
  std::vector<WeightDumpEntry> weights;
  std::vector<CfTraceEntry> trace;
};
StepDump make_step_dump(const StepResult& result);

class JsonlWriter {
 public:
  JsonlWriter() = default;
  JsonlWriter(const std::filesystem::path& path, bool append);
  bool is_open() const { return out_.is_open(); }
  void write(const nlohmann::json& record);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

// Drops records whose "step" field is >= step; used when resuming.
void truncate_jsonl_from_step(const std::filesystem::path& path, std::uint64_t step);

}  // namespace cfcredit
