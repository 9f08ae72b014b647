// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cfcredit/config.hpp"
#include "cfcredit/dumps.hpp"
#include "cfcredit/error.hpp"
#include "cfcredit/experiment.hpp"

using namespace cfcredit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cfcredit_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("configuration round trip and overrides") {
  ExperimentConfig cfg;
  const auto j = to_json(cfg);
  const auto back = experiment_config_from_json(j);
  CHECK(to_json(back) == j);

  auto doc = j;
  apply_override(doc, "train.learning_rate", "0.5");
  apply_override(doc, "train.weight.w_max", "3");
  CHECK(experiment_config_from_json(doc).train.learning_rate == 0.5);
  CHECK(experiment_config_from_json(doc).train.weight.w_max == 3.0);
  apply_override(doc, "train.no_such_key", "1");
  CHECK_THROWS_AS(experiment_config_from_json(doc), Error);

  nlohmann::json unknown = j;
  unknown["bogus"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(unknown), Error);

  CHECK(parse_modes("cf,uniform") ==
        std::vector<WeightMode>{WeightMode::kCounterfactual, WeightMode::kUniform});
  CHECK(parse_seeds("3,1") == std::vector<std::uint64_t>{3, 1});
  CHECK_THROWS_AS(parse_modes("cf,bad"), Error);
  CHECK_THROWS_AS(parse_seeds("1,x"), Error);
}

TEST_CASE("configuration files") {
  const auto dir = scratch("config");
  {
    std::ofstream(dir / "c.json") << R"({"seed": 7, "train": {"group_size": 4}})";
    std::ofstream(dir / "bad.json") << "{ not json";
  }
  const auto cfg = load_experiment_config(dir / "c.json");
  CHECK(cfg.seed == 7);
  CHECK(cfg.train.group_size == 4);
  CHECK(cfg.train.batch_size == TrainConfig{}.batch_size);
  CHECK_THROWS_AS(load_experiment_config(dir / "bad.json"), Error);
  CHECK_THROWS_AS(load_experiment_config(dir / "missing.json"), Error);
  fs::remove_all(dir);
}

TEST_CASE("dump records round trip") {
  SpanDumpEntry s;
  s.completion_id = "s3-p12-g1";
  s.step = 3;
  s.prompt = "p";
  s.text = "2 + 3 = 5\n#### 5";
  s.reward = 1;
  s.reasoning_tokens = 6;
  s.completion_tokens = 9;
  SpanDumpSpan sp;
  sp.span_id = 0;
  sp.char_range = {0, 9};
  sp.token_range = {0, 5};
  sp.kind = SpanKind::kArithmetic;
  sp.text = "2 + 3 = 5";
  sp.drop = -12.5;
  sp.normalized = 1.0;
  s.spans.push_back(sp);
  sp.drop.reset();
  sp.normalized.reset();
  s.spans.push_back(sp);
  const auto s2 = span_entry_from_json(to_json(s));
  CHECK(to_json(s2) == to_json(s));
  CHECK_FALSE(s2.spans[1].drop);

  WeightDumpEntry w;
  w.completion_id = "x";
  w.mode = WeightMode::kInverted;
  w.weights = {1.0, 4.0};
  w.span_provenance = {-1, 0};
  w.normalized = {0.0, 0.25};
  CHECK(to_json(weight_entry_from_json(to_json(w))) == to_json(w));

  CfTraceEntry t;
  t.completion_id = "x";
  t.span_id = 2;
  t.drop = 0.5;
  t.importance = -0.5;
  CHECK(to_json(cf_trace_from_json(to_json(t))) == to_json(t));
}

TEST_CASE("a malformed dump line reports its line number") {
  const auto dir = scratch("dumps");
  WeightDumpEntry w;
  w.completion_id = "x";
  w.weights = {1.0};
  w.span_provenance = {-1};
  w.normalized = {0.0};
  {
    std::ofstream out(dir / "w.jsonl");
    out << to_json(w).dump() << "\n\n" << to_json(w).dump() << "\n{broken\n";
  }
  try {
    read_weight_dump(dir / "w.jsonl");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find(":4") != std::string::npos);
  }
  {
    std::ofstream out(dir / "ok.jsonl");
    out << to_json(w).dump() << "\n\n" << to_json(w).dump() << "\n";
  }
  CHECK(read_weight_dump(dir / "ok.jsonl").size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("resuming truncates dumps at a step") {
  const auto dir = scratch("truncate");
  {
    JsonlWriter out(dir / "t.jsonl", false);
    for (std::uint64_t step = 1; step <= 5; ++step) {
      CfTraceEntry t;
      t.completion_id = "c" + std::to_string(step);
      t.step = step;
      out.write(to_json(t));
    }
  }
  truncate_jsonl_from_step(dir / "t.jsonl", 3);
  const auto kept = read_cf_trace(dir / "t.jsonl");
  REQUIRE(kept.size() == 2);
  CHECK(kept.back().step == 2);
  fs::remove_all(dir);
}

TEST_CASE("curve area is the mean of the evaluation accuracies") {
  const std::vector<EvalPoint> curve{{0, 0.2}, {25, 0.4}, {50, 0.6}};
  CHECK(curve_auc(curve) == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(curve_auc(std::vector<EvalPoint>{}) == 0.0);
}

TEST_CASE("paired deltas are taken per seed") {
  std::vector<ArmResult> arms;
  auto add = [&](WeightMode m, std::uint64_t seed, double acc) {
    ArmResult a;
    a.mode = m;
    a.seed = seed;
    a.final_accuracy = acc;
    arms.push_back(a);
  };
  add(WeightMode::kCounterfactual, 1, 0.50);
  add(WeightMode::kCounterfactual, 2, 0.40);
  add(WeightMode::kUniform, 1, 0.45);
  add(WeightMode::kUniform, 2, 0.42);
  add(WeightMode::kInverted, 1, 0.30);
  const auto d = paired_deltas(arms);
  const PairedDelta* cu = nullptr;
  const PairedDelta* ci = nullptr;
  for (const auto& x : d) {
    if (x.a == WeightMode::kCounterfactual && x.b == WeightMode::kUniform) cu = &x;
    if (x.a == WeightMode::kCounterfactual && x.b == WeightMode::kInverted) ci = &x;
  }
  REQUIRE(cu);
  REQUIRE(ci);
  CHECK(cu->per_seed.size() == 2);
  CHECK(cu->mean == doctest::Approx((0.05 - 0.02) / 2).epsilon(1e-12));
  CHECK(ci->per_seed.size() == 1);
  CHECK(ci->mean == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("arm results and metrics rows") {
  ArmResult a;
  a.mode = WeightMode::kRandom;
  a.seed = 4;
  a.evals = {{0, 0.1}, {10, 0.3}};
  a.final_accuracy = 0.3;
  a.auc = 0.2;
  a.name = arm_name(a.mode, a.seed);
  CHECK(a.name == "random_seed4");
  CHECK(to_json(arm_result_from_json(to_json(a))) == to_json(a));

  const std::string header = metrics_csv_header();
  StepMetrics m;
  m.step = 3;
  const std::string row = metrics_csv_row(m, "", 0.0);
  auto columns = [](const std::string& s) { return std::count(s.begin(), s.end(), ',') + 1; };
  CHECK(columns(header) == columns(row));
  CHECK(header.starts_with("step,"));
}

TEST_CASE("run manifest") {
  const auto dir = scratch("manifest");
  RunManifest m;
  m.command = "cfcredit train";
  m.seeds = {1, 2};
  m.outputs = {"report.json"};
  m.write(dir / "manifest.json");
  std::ifstream in(dir / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j["status"] == "started");
  CHECK(j["seeds"].size() == 2);
  CHECK(j["code_version"] == source_hash());
  CHECK(source_hash().size() == 64);
  fs::remove_all(dir);
}
