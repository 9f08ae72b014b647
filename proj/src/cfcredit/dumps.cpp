// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/dumps.hpp"

#include <sstream>

#include "cfcredit/checkpoint.hpp"
#include "cfcredit/error.hpp"

namespace cfcredit {
namespace {

using nlohmann::json;

json optional_number(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

std::optional<double> read_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

template <typename T, typename F>
std::vector<T> read_lines(const std::filesystem::path& path, F parse) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const json::exception& e) {
      fail(ErrorCode::kParse,
           path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

json to_json(const SpanDumpEntry& e) {
  json spans = json::array();
  for (const auto& s : e.spans) {
    spans.push_back({{"span_id", s.span_id},
                     {"char_range", {s.char_range.start, s.char_range.end}},
                     {"token_range", {s.token_range.start, s.token_range.end}},
                     {"kind", to_string(s.kind)},
                     {"text", s.text},
                     {"labels", label_names(s.labels)},
                     {"drop", optional_number(s.drop)},
                     {"normalized", optional_number(s.normalized)}});
  }
  return {{"completion_id", e.completion_id},
          {"step", e.step},
          {"prompt", e.prompt},
          {"text", e.text},
          {"reward", e.reward},
          {"reasoning_tokens", e.reasoning_tokens},
          {"completion_tokens", e.completion_tokens},
          {"skipped", e.skipped},
          {"cache_hit", e.cache_hit},
          {"spans", spans}};
}

json to_json(const WeightDumpEntry& e) {
  return {{"completion_id", e.completion_id}, {"step", e.step},
          {"mode", to_string(e.mode)},        {"weights", e.weights},
          {"span_provenance", e.span_provenance}, {"normalized", e.normalized}};
}

json to_json(const CfTraceEntry& e) {
  return {{"completion_id", e.completion_id}, {"step", e.step},
          {"span_id", e.span_id},             {"drop", optional_number(e.drop)},
          {"importance", optional_number(e.importance)},
          {"skipped", e.skipped},             {"cache_hit", e.cache_hit}};
}

SpanDumpEntry span_entry_from_json(const json& j) {
  SpanDumpEntry e;
  e.completion_id = j.at("completion_id").get<std::string>();
  e.step = j.value("step", std::uint64_t{0});
  e.prompt = j.value("prompt", std::string());
  e.text = j.value("text", std::string());
  e.reward = j.value("reward", 0);
  e.reasoning_tokens = j.value("reasoning_tokens", std::size_t{0});
  e.completion_tokens = j.value("completion_tokens", std::size_t{0});
  e.skipped = j.value("skipped", false);
  e.cache_hit = j.value("cache_hit", false);
  for (const auto& s : j.at("spans")) {
    SpanDumpSpan sp;
    sp.span_id = s.value("span_id", static_cast<int>(e.spans.size()));
    const auto cr = s.at("char_range");
    sp.char_range = {cr.at(0).get<std::size_t>(), cr.at(1).get<std::size_t>()};
    const auto tr = s.at("token_range");
    sp.token_range = {tr.at(0).get<std::size_t>(), tr.at(1).get<std::size_t>()};
    sp.kind = span_kind_from_string(s.at("kind").get<std::string>());
    sp.text = s.value("text", std::string());
    const auto names = s.value("labels", std::vector<std::string>{});
    sp.labels = labels_from_names(names);
    sp.drop = read_optional(s, "drop");
    sp.normalized = read_optional(s, "normalized");
    e.spans.push_back(std::move(sp));
  }
  return e;
}

WeightDumpEntry weight_entry_from_json(const json& j) {
  WeightDumpEntry e;
  e.completion_id = j.at("completion_id").get<std::string>();
  e.step = j.value("step", std::uint64_t{0});
  e.mode = weight_mode_from_string(j.at("mode").get<std::string>());
  e.weights = j.at("weights").get<std::vector<double>>();
  e.span_provenance = j.value("span_provenance", std::vector<int>(e.weights.size(), -1));
  e.normalized = j.value("normalized", std::vector<double>(e.weights.size(), 0.0));
  if (e.span_provenance.size() != e.weights.size() || e.normalized.size() != e.weights.size())
    fail(ErrorCode::kParse, "weights, span_provenance and normalized differ in length");
  return e;
}

CfTraceEntry cf_trace_from_json(const json& j) {
  CfTraceEntry e;
  e.completion_id = j.at("completion_id").get<std::string>();
  e.step = j.value("step", std::uint64_t{0});
  e.span_id = j.value("span_id", -1);
  e.drop = read_optional(j, "drop");
  e.importance = read_optional(j, "importance");
  e.skipped = j.value("skipped", false);
  e.cache_hit = j.value("cache_hit", false);
  return e;
}

std::vector<SpanDumpEntry> read_span_dump(const std::filesystem::path& path) {
  return read_lines<SpanDumpEntry>(path, span_entry_from_json);
}

std::vector<WeightDumpEntry> read_weight_dump(const std::filesystem::path& path) {
  return read_lines<WeightDumpEntry>(path, weight_entry_from_json);
}

std::vector<CfTraceEntry> read_cf_trace(const std::filesystem::path& path) {
  return read_lines<CfTraceEntry>(path, cf_trace_from_json);
}

std::string completion_id(std::uint64_t step, std::int64_t problem_id, std::size_t index) {
  return "s" + std::to_string(step) + "-p" + std::to_string(problem_id) + "-c" +
         std::to_string(index);
}

StepDump make_step_dump(const StepResult& result) {
  StepDump d;
  const std::uint64_t step = result.metrics.step;
  for (const auto& g : result.groups) {
    for (std::size_t j = 0; j < g.completions.size(); ++j) {
      const Completion& c = g.completions[j];
      const CompletionEstimate& est = g.estimates[j];
      const std::string id = completion_id(step, g.problem->id, j);
      SpanDumpEntry se;
      se.completion_id = id;
      se.step = step;
      se.prompt = c.prompt_text;
      se.text = c.text;
      se.reward = static_cast<int>(g.rewards[j]);
      se.reasoning_tokens = c.tokens.boundary;
      se.completion_tokens = c.tokens.size();
      se.skipped = est.skipped;
      se.cache_hit = est.cache_hit;
      const bool estimated = !est.importances.empty();
      for (std::size_t k = 0; k < g.spans[j].size(); ++k) {
        const Span& s = g.spans[j][k];
        SpanDumpSpan ds{static_cast<int>(k), s.char_range, s.token_range, s.kind, s.text,
                        classify_pattern(s), std::nullopt, std::nullopt};
        if (estimated) ds.drop = est.importances[k].drop;
        if ((estimated || est.cache_hit) && !s.token_range.empty() &&
            s.token_range.start < est.weights.normalized.size())
          ds.normalized = est.weights.normalized[s.token_range.start];
        se.spans.push_back(std::move(ds));
        CfTraceEntry te{id, step, static_cast<int>(k), std::nullopt, std::nullopt,
                        est.skipped, est.cache_hit};
        if (estimated) {
          te.drop = est.importances[k].drop;
          te.importance = est.importances[k].importance;
        }
        d.trace.push_back(te);
      }
      if (g.spans[j].empty())
        d.trace.push_back({id, step, -1, std::nullopt, std::nullopt, est.skipped,
                           est.cache_hit});
      d.spans.push_back(std::move(se));
      d.weights.push_back({id, step, est.weights.mode, est.weights.weights,
                           est.weights.provenance, est.weights.normalized});
    }
  }
  return d;
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path, bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) fail(ErrorCode::kIo, "cannot write " + path.string());
}

void JsonlWriter::write(const json& record) {
  out_ << record.dump() << '\n';
  if (!out_) fail(ErrorCode::kIo, "write failed");
}

void truncate_jsonl_from_step(const std::filesystem::path& path, std::uint64_t step) {
  if (!std::filesystem::exists(path)) return;
  std::istringstream in(read_file(path));
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      if (json::parse(line).value("step", std::uint64_t{0}) >= step) continue;
    } catch (const json::exception&) {
      continue;  // a torn final line from an interrupted run
    }
    kept += line;
    kept += '\n';
  }
  write_file_atomic(path, kept);
}

}  // namespace cfcredit
