// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/config.hpp"

#include <sstream>

#include "cfcredit/checkpoint.hpp"
#include "cfcredit/error.hpp"

namespace cfcredit {
namespace {

using nlohmann::json;

void check_known(const json& given, const json& known, const std::string& where) {
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key))
      fail(ErrorCode::kInvalidArgument, "unknown configuration key '" + path + "'");
    if (value.is_object() && known.at(key).is_object()) check_known(value, known.at(key), path);
  }
}

json adam_json(const AdamConfig& a) {
  return {{"learning_rate", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2},
          {"eps", a.eps}, {"grad_clip", a.grad_clip}};
}

AdamConfig adam_from(const json& j) {
  AdamConfig a;
  a.learning_rate = j.at("learning_rate").get<double>();
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.eps = j.at("eps").get<double>();
  a.grad_clip = j.at("grad_clip").get<double>();
  return a;
}

std::vector<std::string> split_csv(std::string_view csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in{std::string(csv)};
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  require(data.min_steps >= kMinSteps && data.max_steps <= kMaxSteps &&
              data.min_steps <= data.max_steps,
          "data step range must lie in [2, 4]");
  require(!modes.empty(), "at least one weighting mode is required");
  require(!seeds.empty(), "at least one seed is required");
  require(checkpoint_interval >= 1, "checkpoint interval must be positive");
  require(warmstart.batch_size >= 1, "warm-start batch size must be positive");
  model.validate();
  train.validate();
}

json to_json(const ExperimentConfig& c) {
  json modes = json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  const auto& t = c.train;
  return {
      {"seed", c.seed},
      {"tokenizer", to_string(c.tokenizer)},
      {"data",
       {{"train_size", c.data.train_size},
        {"eval_size", c.data.eval_size},
        {"min_steps", c.data.min_steps},
        {"max_steps", c.data.max_steps}}},
      {"model", to_json(c.model)},
      {"warmstart",
       {{"epochs", c.warmstart.epochs},
        {"batch_size", c.warmstart.batch_size},
        {"adam", adam_json(c.warmstart.adam)},
        {"final_lr_fraction", c.warmstart.final_lr_fraction},
        {"warmup_updates", c.warmstart.warmup_updates},
        {"seed", c.warmstart.seed},
        {"min_accuracy", c.warmstart.min_accuracy}}},
      {"train",
       {{"group_size", t.group_size},
        {"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"grad_accum", t.grad_accum},
        {"total_steps", t.total_steps},
        {"eval_interval", t.eval_interval},
        {"eval_size", t.eval_size},
        {"sampler",
         {{"temperature", t.sampler.temperature},
          {"top_p", t.sampler.top_p},
          {"max_new_tokens", t.sampler.max_new_tokens}}},
        {"weight",
         {{"w_min", t.weight.w_min},
          {"w_max", t.weight.w_max},
          {"w_ans", t.weight.w_ans},
          {"epsilon", t.weight.epsilon},
          {"uniform_answer_boost", t.weight.uniform_answer_boost}}},
        {"spans",
         {{"k_max", t.spans.k_max},
          {"selection", t.spans.selection == SpanSelection::kLongest ? "longest" : "first"}}},
        {"advantage_epsilon", t.advantage_epsilon},
        {"bessel", t.bessel},
        {"skip_uniform_groups", t.skip_uniform_groups},
        {"use_cache", t.use_cache},
        {"grad_clip", t.grad_clip},
        {"workers", t.workers}}},
      {"modes", modes},
      {"seeds", c.seeds},
      {"dump_spans", c.dump_spans},
      {"checkpoint_interval", c.checkpoint_interval},
  };
}

ExperimentConfig experiment_config_from_json(const json& given) {
  ExperimentConfig c;
  json doc = to_json(c);
  if (!given.is_object()) fail(ErrorCode::kInvalidArgument, "configuration must be a JSON object");
  check_known(given, doc, "");
  doc.merge_patch(given);
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.tokenizer = tokenizer_kind_from_string(doc.at("tokenizer").get<std::string>());
    const auto& d = doc.at("data");
    c.data.train_size = d.at("train_size").get<std::size_t>();
    c.data.eval_size = d.at("eval_size").get<std::size_t>();
    c.data.min_steps = d.at("min_steps").get<int>();
    c.data.max_steps = d.at("max_steps").get<int>();
    c.model = model_config_from_json(doc.at("model"));
    const auto& w = doc.at("warmstart");
    c.warmstart.epochs = w.at("epochs").get<std::size_t>();
    c.warmstart.batch_size = w.at("batch_size").get<std::size_t>();
    c.warmstart.adam = adam_from(w.at("adam"));
    c.warmstart.final_lr_fraction = w.at("final_lr_fraction").get<double>();
    c.warmstart.warmup_updates = w.at("warmup_updates").get<std::size_t>();
    c.warmstart.seed = w.at("seed").get<std::uint64_t>();
    c.warmstart.min_accuracy = w.at("min_accuracy").get<double>();
    const auto& t = doc.at("train");
    auto& tc = c.train;
    tc.group_size = t.at("group_size").get<std::size_t>();
    tc.learning_rate = t.at("learning_rate").get<double>();
    tc.batch_size = t.at("batch_size").get<std::size_t>();
    tc.grad_accum = t.at("grad_accum").get<std::size_t>();
    tc.total_steps = t.at("total_steps").get<std::size_t>();
    tc.eval_interval = t.at("eval_interval").get<std::size_t>();
    tc.eval_size = t.at("eval_size").get<std::size_t>();
    const auto& s = t.at("sampler");
    tc.sampler.temperature = s.at("temperature").get<double>();
    tc.sampler.top_p = s.at("top_p").get<double>();
    tc.sampler.max_new_tokens = s.at("max_new_tokens").get<std::size_t>();
    const auto& wt = t.at("weight");
    tc.weight.w_min = wt.at("w_min").get<double>();
    tc.weight.w_max = wt.at("w_max").get<double>();
    tc.weight.w_ans = wt.at("w_ans").get<double>();
    tc.weight.epsilon = wt.at("epsilon").get<double>();
    tc.weight.uniform_answer_boost = wt.at("uniform_answer_boost").get<bool>();
    const auto& sp = t.at("spans");
    tc.spans.k_max = sp.at("k_max").get<std::size_t>();
    const auto sel = sp.at("selection").get<std::string>();
    if (sel != "first" && sel != "longest")
      fail(ErrorCode::kInvalidArgument, "spans.selection must be 'first' or 'longest'");
    tc.spans.selection = sel == "longest" ? SpanSelection::kLongest : SpanSelection::kFirst;
    tc.advantage_epsilon = t.at("advantage_epsilon").get<double>();
    tc.bessel = t.at("bessel").get<bool>();
    tc.skip_uniform_groups = t.at("skip_uniform_groups").get<bool>();
    tc.use_cache = t.at("use_cache").get<bool>();
    tc.grad_clip = t.at("grad_clip").get<double>();
    tc.workers = t.at("workers").get<std::size_t>();
    c.modes.clear();
    for (const auto& m : doc.at("modes")) c.modes.push_back(weight_mode_from_string(m.get<std::string>()));
    c.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    c.dump_spans = doc.at("dump_spans").get<bool>();
    c.checkpoint_interval = doc.at("checkpoint_interval").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad configuration value: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

void apply_override(json& doc, std::string_view path, std::string_view value) {
  require(!path.empty(), "empty configuration path");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = std::string(value);
  }
  json* node = &doc;
  std::size_t at = 0;
  for (;;) {
    const auto dot = path.find('.', at);
    const std::string key(path.substr(at, dot == std::string_view::npos ? path.npos : dot - at));
    require(!key.empty(), "malformed configuration path '" + std::string(path) + "'");
    if (dot == std::string_view::npos) {
      (*node)[key] = parsed;
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    at = dot + 1;
  }
}

std::vector<WeightMode> parse_modes(std::string_view csv) {
  std::vector<WeightMode> out;
  for (const auto& s : split_csv(csv)) out.push_back(weight_mode_from_string(s));
  require(!out.empty(), "no modes given");
  return out;
}

std::vector<std::uint64_t> parse_seeds(std::string_view csv) {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_csv(csv)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(s, &used));
      require(used == s.size(), "");
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, "bad seed '" + s + "'");
    }
  }
  require(!out.empty(), "no seeds given");
  return out;
}

}  // namespace cfcredit
