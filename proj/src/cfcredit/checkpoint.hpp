// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary archives: a JSON header followed by raw little-endian
// 64-bit sections. Writes go to a temporary file that is renamed into place.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfcredit/policy.hpp"
#include "cfcredit/tokenizer.hpp"

namespace cfcredit {

inline constexpr std::uint32_t kArchiveVersion = 1;

struct Archive {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, std::vector<double>> f64;
  std::map<std::string, std::vector<std::int64_t>> i64;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
// Throws kParse on a malformed file and kInvalidArgument on a kind mismatch
// (when expected_kind is non-empty).
Archive read_archive(const std::filesystem::path& path, std::string_view expected_kind = {});

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
std::string_view to_string(TokenizerKind kind);
TokenizerKind tokenizer_kind_from_string(std::string_view name);

// Policy checkpoints also record the tokenizer the model was trained with.
void save_policy(const std::filesystem::path& path, const Policy& policy,
                 TokenizerKind tokenizer);

struct LoadedPolicy {
  Policy policy;
  TokenizerKind tokenizer;
};
LoadedPolicy load_policy(const std::filesystem::path& path);

// Writes text to path through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_file(const std::filesystem::path& path);

}  // namespace cfcredit
