// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit.h"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cfcredit/analysis.hpp"
#include "cfcredit/checkpoint.hpp"
#include "cfcredit/config.hpp"
#include "cfcredit/corpus.hpp"
#include "cfcredit/dumps.hpp"
#include "cfcredit/error.hpp"
#include "cfcredit/experiment.hpp"
#include "cfcredit/rng.hpp"
#include "cfcredit/warmstart.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

struct cfc_config {
  json doc;
  cfcredit::ExperimentConfig parsed;
};

struct cfc_policy {
  cfcredit::Policy policy;
  cfcredit::Tokenizer tokenizer;
};

namespace {

thread_local std::string g_last_error;

cfc_status to_status(cfcredit::ErrorCode code) {
  switch (code) {
    case cfcredit::ErrorCode::kInvalidArgument: return CFC_ERR_INVALID_ARGUMENT;
    case cfcredit::ErrorCode::kIo: return CFC_ERR_IO;
    case cfcredit::ErrorCode::kParse: return CFC_ERR_PARSE;
    case cfcredit::ErrorCode::kGate: return CFC_ERR_GATE;
    case cfcredit::ErrorCode::kNumeric: return CFC_ERR_NUMERIC;
    case cfcredit::ErrorCode::kExists: return CFC_ERR_EXISTS;
    case cfcredit::ErrorCode::kInternal: return CFC_ERR_INTERNAL;
  }
  return CFC_ERR_INTERNAL;
}

template <typename F>
cfc_status guarded(F&& body) {
  try {
    body();
    return CFC_OK;
  } catch (const cfcredit::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const fs::filesystem_error& e) {
    g_last_error = e.what();
    return CFC_ERR_IO;
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return CFC_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CFC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CFC_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return CFC_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) cfcredit::fail(cfcredit::ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (!force && fs::exists(path))
    cfcredit::fail(cfcredit::ErrorCode::kExists,
                   path.string() + " exists; pass force to overwrite");
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Evaluation problems for a dataset: fresh statements from a separate stream.
std::vector<cfcredit::DatasetEntry> heldout_for(const cfcredit::ExperimentConfig& c,
                                                std::span<const cfcredit::DatasetEntry> data) {
  return cfcredit::generate_heldout(c.data.eval_size, c.seed, data, c.data.min_steps,
                                    c.data.max_steps);
}

void reparse(cfc_config* config) { config->parsed = cfcredit::experiment_config_from_json(config->doc); }

}  // namespace

extern "C" {

const char* cfc_version(void) { return "0.1.0"; }

const char* cfc_source_hash(void) {
  static const std::string hash = cfcredit::source_hash();
  return hash.c_str();
}

const char* cfc_last_error(void) { return g_last_error.c_str(); }

const char* cfc_status_name(cfc_status status) {
  switch (status) {
    case CFC_OK: return "ok";
    case CFC_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CFC_ERR_IO: return "i/o error";
    case CFC_ERR_PARSE: return "parse error";
    case CFC_ERR_GATE: return "accuracy gate failed";
    case CFC_ERR_NUMERIC: return "numeric error";
    case CFC_ERR_EXISTS: return "output exists";
    case CFC_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void cfc_string_free(char* s) { delete[] s; }

cfc_status cfc_set_log_level(const char* level) {
  return guarded([&] {
    need(level, "level");
    const auto l = spdlog::level::from_str(level);
    if (l == spdlog::level::off && std::string_view(level) != "off")
      cfcredit::fail(cfcredit::ErrorCode::kInvalidArgument,
                     std::string("unknown log level '") + level + "'");
    spdlog::set_level(l);
  });
}

cfc_status cfc_config_create(const char* path_or_null, cfc_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    auto c = std::make_unique<cfc_config>();
    c->parsed = path_or_null ? cfcredit::load_experiment_config(path_or_null)
                             : cfcredit::ExperimentConfig{};
    c->doc = cfcredit::to_json(c->parsed);
    *out = c.release();
  });
}

void cfc_config_free(cfc_config* config) { delete config; }

cfc_status cfc_config_set(cfc_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    json doc = config->doc;
    cfcredit::apply_override(doc, key, value);
    config->parsed = cfcredit::experiment_config_from_json(doc);
    config->doc = cfcredit::to_json(config->parsed);
  });
}

cfc_status cfc_config_set_modes(cfc_config* config, const char* modes_csv) {
  return guarded([&] {
    need(config, "config");
    need(modes_csv, "modes");
    json modes = json::array();
    for (auto m : cfcredit::parse_modes(modes_csv)) modes.push_back(cfcredit::to_string(m));
    config->doc["modes"] = modes;
    reparse(config);
  });
}

cfc_status cfc_config_set_seeds(cfc_config* config, const char* seeds_csv) {
  return guarded([&] {
    need(config, "config");
    need(seeds_csv, "seeds");
    config->doc["seeds"] = cfcredit::parse_seeds(seeds_csv);
    reparse(config);
  });
}

cfc_status cfc_config_to_json(const cfc_config* config, char** out_json) {
  return guarded([&] {
    need(config, "config");
    need(out_json, "out_json");
    *out_json = copy_string(config->doc.dump(2));
  });
}

cfc_status cfc_config_get_int(const cfc_config* config, const char* key, int64_t* out) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(out, "out");
    const json* node = &config->doc;
    std::string_view path(key);
    for (;;) {
      const auto dot = path.find('.');
      const std::string part(path.substr(0, dot));
      if (!node->is_object() || !node->contains(part))
        cfcredit::fail(cfcredit::ErrorCode::kInvalidArgument,
                       std::string("unknown configuration key '") + key + "'");
      node = &node->at(part);
      if (dot == std::string_view::npos) break;
      path.remove_prefix(dot + 1);
    }
    if (!node->is_number_integer())
      cfcredit::fail(cfcredit::ErrorCode::kInvalidArgument,
                     std::string("configuration key '") + key + "' is not an integer");
    *out = node->get<int64_t>();
  });
}

cfc_status cfc_generate_dataset(const char* path, uint64_t n, uint64_t seed, int min_steps,
                                int max_steps, int force) {
  return guarded([&] {
    need(path, "path");
    const fs::path out(path);
    refuse_overwrite(out, force != 0);
    ensure_parent(out);
    const int lo = min_steps > 0 ? min_steps : cfcredit::kMinSteps;
    const int hi = max_steps > 0 ? max_steps : cfcredit::kMaxSteps;
    cfcredit::require(lo >= cfcredit::kMinSteps && hi <= cfcredit::kMaxSteps && lo <= hi,
                      "step range must lie in [2, 4]");
    cfcredit::write_dataset(out, cfcredit::generate_dataset(n, seed, lo, hi));
  });
}

cfc_status cfc_warmstart(const cfc_config* config, const char* dataset_path,
                         const char* checkpoint_path, int force, cfc_warmstart_result* result) {
  return guarded([&] {
    need(config, "config");
    need(dataset_path, "dataset_path");
    need(checkpoint_path, "checkpoint_path");
    const auto& c = config->parsed;
    const fs::path out(checkpoint_path);
    refuse_overwrite(out, force != 0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = cfcredit::read_dataset(dataset_path);
    cfcredit::require(!data.empty(), std::string(dataset_path) + " holds no problems");
    const cfcredit::Tokenizer tok(c.tokenizer);
    cfcredit::ModelConfig mc = c.model;
    mc.vocab_size = tok.vocab_size();
    cfcredit::Policy policy(mc, cfcredit::derive_seed(c.seed, "init"));
    const auto report = cfcredit::warmstart(policy, tok, data, c.warmstart);
    const auto heldout = heldout_for(c, data);
    const double acc = cfcredit::greedy_accuracy(policy, tok, heldout,
                                                 c.train.sampler.max_new_tokens, c.train.workers);
    ensure_parent(out);
    cfcredit::save_policy(out, policy, c.tokenizer);
    spdlog::info("warm start: held-out accuracy {:.3f} on {} problems", acc, heldout.size());
    if (result) {
      result->heldout_accuracy = acc;
      result->final_loss = report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back();
      result->updates = report.updates;
      result->seconds = seconds_since(t0);
    }
    cfcredit::check_gate(acc, c.warmstart.min_accuracy);
  });
}

cfc_status cfc_train(const cfc_config* config, const char* dataset_path,
                     const char* checkpoint_path, const char* out_dir,
                     const cfc_train_options* options, cfc_train_result* result) {
  return guarded([&] {
    need(config, "config");
    need(dataset_path, "dataset_path");
    need(checkpoint_path, "checkpoint_path");
    need(out_dir, "out_dir");
    const cfc_train_options defaults{0, 0, nullptr};
    const cfc_train_options& o = options ? *options : defaults;
    const auto& c = config->parsed;
    const fs::path dir(out_dir);
    const fs::path report_path = dir / "report.json";
    const fs::path manifest_path = dir / "manifest.json";
    if (!o.resume) refuse_overwrite(manifest_path, o.force != 0);
    fs::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();

    auto data = cfcredit::read_dataset(dataset_path);
    cfcredit::require(!data.empty(), std::string(dataset_path) + " holds no problems");
    if (data.size() > c.data.train_size) data.resize(c.data.train_size);
    std::vector<cfcredit::Problem> train;
    train.reserve(data.size());
    for (const auto& e : data) train.push_back(e.problem);
    const auto heldout = heldout_for(c, data);

    auto loaded = cfcredit::load_policy(checkpoint_path);
    cfcredit::require(loaded.tokenizer == c.tokenizer,
                      "checkpoint tokenizer differs from the configured tokenizer");
    const cfcredit::Tokenizer tok(loaded.tokenizer);
    cfcredit::require(loaded.policy.config().vocab_size == tok.vocab_size(),
                      "checkpoint vocabulary does not match its tokenizer");

    cfcredit::RunManifest manifest;
    manifest.command = o.command ? o.command : "train";
    manifest.config = config->doc;
    manifest.seeds = c.seeds;
    for (auto mode : c.modes)
      for (auto seed : c.seeds) {
        const std::string name = cfcredit::arm_name(mode, seed);
        manifest.outputs.push_back((dir / (name + ".csv")).string());
        manifest.outputs.push_back((dir / (name + ".result.json")).string());
        if (c.dump_spans && cfcredit::needs_importance(mode)) {
          manifest.outputs.push_back((dir / (name + ".spans.jsonl")).string());
          manifest.outputs.push_back((dir / (name + ".weights.jsonl")).string());
          manifest.outputs.push_back((dir / (name + ".trace.jsonl")).string());
        }
      }
    manifest.outputs.push_back(report_path.string());
    manifest.write(manifest_path);

    const double acc = cfcredit::greedy_accuracy(loaded.policy, tok, heldout,
                                                 c.train.sampler.max_new_tokens, c.train.workers);
    manifest.timings["gate_seconds"] = seconds_since(t0);
    spdlog::info("warm start held-out accuracy {:.3f}", acc);
    if (result) result->heldout_accuracy = acc;
    try {
      cfcredit::check_gate(acc, c.warmstart.min_accuracy);
    } catch (const cfcredit::Error&) {
      manifest.status = "gate_failed";
      manifest.write(manifest_path);
      throw;
    }

    cfcredit::RunOptions run{dir, o.resume != 0, c.dump_spans, c.checkpoint_interval};
    manifest.status = "running";
    manifest.write(manifest_path);
    cfcredit::ExperimentReport report;
    try {
      report = cfcredit::run_experiment(loaded.policy, tok, c.train, c.modes, c.seeds, train,
                                        heldout, run);
    } catch (...) {
      manifest.status = "failed";
      manifest.timings["total_seconds"] = seconds_since(t0);
      manifest.write(manifest_path);
      throw;
    }
    json rj = cfcredit::to_json(report);
    rj["warmstart_heldout_accuracy"] = acc;
    cfcredit::write_file_atomic(report_path, rj.dump(2) + "\n");
    for (const auto& arm : report.arms) manifest.timings[arm.name] = arm.totals.times.total;
    manifest.timings["experiment_seconds"] = report.wall_seconds;
    manifest.timings["total_seconds"] = seconds_since(t0);
    manifest.status = "complete";
    manifest.write(manifest_path);
    if (result) {
      result->arms = report.arms.size();
      result->wall_seconds = report.wall_seconds;
    }
  });
}

void cfc_analyze_options_default(cfc_analyze_options* options) {
  if (!options) return;
  const cfcredit::AnalysisOptions d;
  options->quantile_bins = d.quantile_bins ? 1 : 0;
  options->w_min = d.w_min;
  options->w_max = d.w_max;
  options->top_distractors = d.top_distractors;
  options->qualitative_limit = d.qualitative_limit;
  options->force = 0;
}

cfc_status cfc_analyze(const char* span_dump, const char* weight_dump, const char* out_dir,
                       const cfc_analyze_options* options) {
  return guarded([&] {
    need(span_dump, "span_dump");
    need(weight_dump, "weight_dump");
    need(out_dir, "out_dir");
    cfc_analyze_options o;
    cfc_analyze_options_default(&o);
    if (options) o = *options;
    const fs::path dir(out_dir);
    refuse_overwrite(dir / "analysis.json", o.force != 0);
    const auto spans = cfcredit::read_span_dump(span_dump);
    const auto weights = cfcredit::read_weight_dump(weight_dump);
    if (spans.empty()) spdlog::warn("{} holds no records; writing empty reports", span_dump);
    cfcredit::AnalysisOptions a;
    a.quantile_bins = o.quantile_bins != 0;
    a.w_min = o.w_min;
    a.w_max = o.w_max;
    a.top_distractors = o.top_distractors;
    a.qualitative_limit = o.qualitative_limit;
    const auto report = cfcredit::analyze(spans, weights, a);
    fs::create_directories(dir);
    cfcredit::write_file_atomic(dir / "drop_bins.csv", cfcredit::bins_csv(report.bins));
    cfcredit::write_file_atomic(dir / "enrichment.csv", cfcredit::enrichment_csv(report.enrichment));
    cfcredit::write_file_atomic(dir / "concentration.csv",
                                cfcredit::concentration_csv(report.concentration));
    cfcredit::write_file_atomic(dir / "distractors.csv", cfcredit::distractors_csv(report.distractors));
    cfcredit::write_file_atomic(dir / "weight_histogram.csv",
                                cfcredit::histogram_csv(report.histogram));
    cfcredit::write_file_atomic(dir / "position.csv", cfcredit::position_csv(report.position));
    cfcredit::write_file_atomic(dir / "qualitative.txt",
                                cfcredit::qualitative_table(spans, a.qualitative_limit));
    cfcredit::write_file_atomic(dir / "analysis.json", cfcredit::to_json(report).dump(2) + "\n");
  });
}

cfc_status cfc_policy_load(const char* path, cfc_policy** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto loaded = cfcredit::load_policy(path);
    *out = new cfc_policy{std::move(loaded.policy), cfcredit::Tokenizer(loaded.tokenizer)};
  });
}

void cfc_policy_free(cfc_policy* policy) { delete policy; }

size_t cfc_policy_num_params(const cfc_policy* policy) {
  return policy ? policy->policy.num_params() : 0;
}

cfc_status cfc_policy_complete(const cfc_policy* policy, const char* prompt,
                               size_t max_new_tokens, char** out_text) {
  return guarded([&] {
    need(policy, "policy");
    need(prompt, "prompt");
    need(out_text, "out_text");
    const auto ids = policy->tokenizer.tokenize(prompt).token_ids;
    cfcredit::SamplerConfig greedy;
    greedy.greedy = true;
    greedy.max_new_tokens = max_new_tokens;
    const auto out = cfcredit::sample(policy->policy, ids, greedy, 0);
    *out_text = copy_string(policy->tokenizer.detokenize(out));
  });
}

}  // extern "C"
