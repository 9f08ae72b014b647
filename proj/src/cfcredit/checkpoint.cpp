// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cfcredit/error.hpp"

namespace cfcredit {
namespace {

static_assert(std::endian::native == std::endian::little,
              "archives are written in native little-endian order");

constexpr char kMagic[8] = {'C', 'F', 'C', 'R', 'E', 'D', 'I', 'T'};

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_array(std::string& out, const std::vector<T>& xs) {
  out.append(reinterpret_cast<const char*>(xs.data()), xs.size() * sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

  const char* take(std::size_t n) {
    if (data_.size() - at_ < n) fail(ErrorCode::kParse, name_ + ": truncated archive");
    const char* p = data_.data() + at_;
    at_ += n;
    return p;
  }
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  template <typename T>
  std::vector<T> get_array(std::size_t n) {
    if (n > (data_.size() - at_) / sizeof(T)) fail(ErrorCode::kParse, name_ + ": truncated archive");
    std::vector<T> xs(n);
    std::memcpy(xs.data(), take(n * sizeof(T)), n * sizeof(T));
    return xs;
  }
  bool done() const { return at_ == data_.size(); }

 private:
  std::string data_;
  std::string name_;
  std::size_t at_ = 0;
};

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot rename " + tmp.string() + ": " + ec.message());
}

void write_archive(const std::filesystem::path& path, const Archive& a) {
  nlohmann::json header;
  header["kind"] = a.kind;
  header["meta"] = a.meta;
  auto sections = nlohmann::json::array();
  for (const auto& [name, xs] : a.f64)
    sections.push_back({{"name", name}, {"dtype", "f64"}, {"count", xs.size()}});
  for (const auto& [name, xs] : a.i64)
    sections.push_back({{"name", name}, {"dtype", "i64"}, {"count", xs.size()}});
  header["sections"] = sections;
  const std::string h = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put(out, kArchiveVersion);
  put(out, std::uint32_t{0});
  put(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  for (const auto& [name, xs] : a.f64) put_array(out, xs);
  for (const auto& [name, xs] : a.i64) put_array(out, xs);
  write_file_atomic(path, out);
}

Archive read_archive(const std::filesystem::path& path, std::string_view expected_kind) {
  const std::string name = path.string();
  Reader r(read_file(path), name);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0)
    fail(ErrorCode::kParse, name + ": not a cfcredit archive");
  const auto version = r.get<std::uint32_t>();
  if (version != kArchiveVersion)
    fail(ErrorCode::kParse, name + ": unsupported archive version " + std::to_string(version));
  r.get<std::uint32_t>();
  const auto header_len = r.get<std::uint64_t>();
  const char* hp = r.take(static_cast<std::size_t>(header_len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hp, hp + header_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, name + ": bad archive header: " + e.what());
  }
  Archive a;
  try {
    a.kind = header.at("kind").get<std::string>();
    a.meta = header.at("meta");
    for (const auto& s : header.at("sections")) {
      const auto sname = s.at("name").get<std::string>();
      const auto count = s.at("count").get<std::size_t>();
      const auto dtype = s.at("dtype").get<std::string>();
      if (dtype == "f64")
        a.f64[sname] = r.get_array<double>(count);
      else if (dtype == "i64")
        a.i64[sname] = r.get_array<std::int64_t>(count);
      else
        fail(ErrorCode::kParse, name + ": unknown section type " + dtype);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, name + ": bad archive header: " + e.what());
  }
  if (!r.done()) fail(ErrorCode::kParse, name + ": trailing bytes after the last section");
  if (!expected_kind.empty() && a.kind != expected_kind)
    fail(ErrorCode::kInvalidArgument, name + " holds a '" + a.kind + "' archive, expected '" +
                                          std::string(expected_kind) + "'");
  return a;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},     {"d_ff", c.d_ff},         {"context", c.context},
          {"init_std", c.init_std},     {"zero_output_head", c.zero_output_head}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.context = j.value("context", c.context);
  c.init_std = j.value("init_std", c.init_std);
  c.zero_output_head = j.value("zero_output_head", c.zero_output_head);
  return c;
}

std::string_view to_string(TokenizerKind kind) {
  return kind == TokenizerKind::kWord ? "word" : "character";
}

TokenizerKind tokenizer_kind_from_string(std::string_view name) {
  if (name == "word") return TokenizerKind::kWord;
  if (name == "character" || name == "char") return TokenizerKind::kCharacter;
  fail(ErrorCode::kInvalidArgument, "unknown tokenizer '" + std::string(name) + "'");
}

void save_policy(const std::filesystem::path& path, const Policy& policy,
                 TokenizerKind tokenizer) {
  Archive a;
  a.kind = "policy";
  a.meta["model"] = to_json(policy.config());
  a.meta["tokenizer"] = to_string(tokenizer);
  a.meta["fingerprint"] = policy.fingerprint();
  const auto& lay = policy.layout();
  const std::size_t d = policy.config().d_model, v = policy.config().vocab_size,
                    f = policy.config().d_ff;
  auto tensors = nlohmann::json::array();
  auto add = [&](const std::string& name, std::size_t off, std::vector<std::size_t> shape) {
    tensors.push_back({{"name", name}, {"offset", off}, {"shape", shape}});
  };
  add("wte", lay.wte, {v, d});
  for (std::size_t l = 0; l < lay.blocks.size(); ++l) {
    const auto& b = lay.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    add(p + "ln1_g", b.ln1_g, {d});
    add(p + "ln1_b", b.ln1_b, {d});
    add(p + "w_qkv", b.w_qkv, {d, 3 * d});
    add(p + "b_qkv", b.b_qkv, {3 * d});
    add(p + "w_o", b.w_o, {d, d});
    add(p + "b_o", b.b_o, {d});
    add(p + "ln2_g", b.ln2_g, {d});
    add(p + "ln2_b", b.ln2_b, {d});
    add(p + "w_fc", b.w_fc, {d, f});
    add(p + "b_fc", b.b_fc, {f});
    add(p + "w_proj", b.w_proj, {f, d});
    add(p + "b_proj", b.b_proj, {d});
  }
  add("lnf_g", lay.lnf_g, {d});
  add("lnf_b", lay.lnf_b, {d});
  add("w_out", lay.w_out, {d, v});
  add("b_out", lay.b_out, {v});
  a.meta["tensors"] = tensors;
  a.f64["params"].assign(policy.params().begin(), policy.params().end());
  write_archive(path, a);
}

LoadedPolicy load_policy(const std::filesystem::path& path) {
  Archive a = read_archive(path, "policy");
  try {
    const ModelConfig cfg = model_config_from_json(a.meta.at("model"));
    const TokenizerKind kind =
        tokenizer_kind_from_string(a.meta.at("tokenizer").get<std::string>());
    auto it = a.f64.find("params");
    if (it == a.f64.end()) fail(ErrorCode::kParse, path.string() + ": no parameter section");
    return {Policy(cfg, std::move(it->second)), kind};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": bad policy metadata: " + e.what());
  }
}

}  // namespace cfcredit
