// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>
#include <string_view>

#include "cfcredit/error.hpp"
#include "cfcredit/rng.hpp"

namespace cfcredit {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

// Row kernels. They are kept out of line so that the training pass and the
// incremental pass execute the same instruction sequence per element.

// out[r] = b + in[r] @ w for `rows` rows. Rows are processed four at a time
// but every output element sees the same sequence of operations as in the
// single-row case.
[[gnu::noinline]] void linear_rows(const double* __restrict in,
                                   const double* __restrict w,
                                   const double* __restrict b, std::size_t rows,
                                   std::size_t k_dim, std::size_t n_dim,
                                   double* __restrict out) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const double* i0 = in + r * k_dim;
    const double* i1 = i0 + k_dim;
    const double* i2 = i1 + k_dim;
    const double* i3 = i2 + k_dim;
    double* __restrict o0 = out + r * n_dim;
    double* __restrict o1 = o0 + n_dim;
    double* __restrict o2 = o1 + n_dim;
    double* __restrict o3 = o2 + n_dim;
    for (std::size_t n = 0; n < n_dim; ++n) o0[n] = o1[n] = o2[n] = o3[n] = b[n];
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double a0 = i0[k], a1 = i1[k], a2 = i2[k], a3 = i3[k];
      const double* __restrict wk = w + k * n_dim;
      for (std::size_t n = 0; n < n_dim; ++n) {
        const double wv = wk[n];
        o0[n] += a0 * wv;
        o1[n] += a1 * wv;
        o2[n] += a2 * wv;
        o3[n] += a3 * wv;
      }
    }
  }
  for (; r < rows; ++r) {
    const double* i0 = in + r * k_dim;
    double* __restrict o0 = out + r * n_dim;
    for (std::size_t n = 0; n < n_dim; ++n) o0[n] = b[n];
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double a0 = i0[k];
      const double* __restrict wk = w + k * n_dim;
      for (std::size_t n = 0; n < n_dim; ++n) o0[n] += a0 * wk[n];
    }
  }
}

[[gnu::noinline]] void layernorm_row(const double* __restrict x,
                                     const double* __restrict g,
                                     const double* __restrict b, std::size_t d,
                                     double* __restrict out, double* mean_out,
                                     double* rstd_out) {
  double mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * rstd * g[i] + b[i];
  if (mean_out) *mean_out = mean;
  if (rstd_out) *rstd_out = rstd;
}

[[gnu::noinline]] void add_rows(const double* __restrict a,
                                const double* __restrict b, std::size_t n,
                                double* __restrict out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

[[gnu::noinline]] void gelu_row(const double* __restrict in, std::size_t n,
                                double* __restrict out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = gelu(in[i]);
}

// Dot product with four interleaved partial sums (fixed order).
inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Causal attention for one query row at position t over key/value rows
// 0..t. att (optional) receives n_heads rows of t + 1 weights each, with
// row stride att_stride.
[[gnu::noinline]] void attention_row(const double* q, const double* keys,
                                     const double* values, std::size_t kv_stride,
                                     std::size_t t, std::size_t n_heads,
                                     std::size_t head_dim, double* y,
                                     double* att, std::size_t att_stride,
                                     double* scratch) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * head_dim;
    double mx = -INFINITY;
    for (std::size_t j = 0; j <= t; ++j) {
      const double* kj = keys + j * kv_stride + off;
      double s = dot(q + off, kj, head_dim) * scale;
      scratch[j] = s;
      mx = std::max(mx, s);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j <= t; ++j) {
      scratch[j] = std::exp(scratch[j] - mx);
      sum += scratch[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j <= t; ++j) scratch[j] *= inv;
    double* yh = y + off;
    std::fill(yh, yh + head_dim, 0.0);
    for (std::size_t j = 0; j <= t; ++j) {
      const double a = scratch[j];
      const double* vj = values + j * kv_stride + off;
      for (std::size_t i = 0; i < head_dim; ++i) yh[i] += a * vj[i];
    }
    if (att) std::copy(scratch, scratch + t + 1, att + h * att_stride);
  }
}

[[gnu::noinline]] void log_softmax_row(const double* __restrict logits,
                                       std::size_t n, double* __restrict out) {
  double mx = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

// Backward of out = in @ w + b for T rows.
void linear_backward(const double* in, const double* w, const double* dout,
                     std::size_t rows, std::size_t k_dim, std::size_t n_dim,
                     double* din, double* dw, double* db) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* __restrict d = dout + t * n_dim;
    for (std::size_t n = 0; n < n_dim; ++n) db[n] += d[n];
  }
  if (din) {
    std::vector<double> wt(k_dim * n_dim);
    for (std::size_t k = 0; k < k_dim; ++k)
      for (std::size_t n = 0; n < n_dim; ++n) wt[n * k_dim + k] = w[k * n_dim + n];
    for (std::size_t t = 0; t < rows; ++t) {
      const double* __restrict d = dout + t * n_dim;
      double* __restrict dr = din + t * k_dim;
      for (std::size_t n = 0; n < n_dim; ++n) {
        const double dv = d[n];
        if (dv == 0.0) continue;
        const double* __restrict wn = wt.data() + n * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) dr[k] += dv * wn[k];
      }
    }
  }
  std::size_t t = 0;
  for (; t + 4 <= rows; t += 4) {
    const double* __restrict d0 = dout + t * n_dim;
    const double* __restrict d1 = d0 + n_dim;
    const double* __restrict d2 = d1 + n_dim;
    const double* __restrict d3 = d2 + n_dim;
    const double* x0 = in + t * k_dim;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double a0 = x0[k], a1 = x0[k_dim + k], a2 = x0[2 * k_dim + k],
                   a3 = x0[3 * k_dim + k];
      double* __restrict dwk = dw + k * n_dim;
      for (std::size_t n = 0; n < n_dim; ++n)
        dwk[n] += a0 * d0[n] + a1 * d1[n] + a2 * d2[n] + a3 * d3[n];
    }
  }
  for (; t < rows; ++t) {
    const double* __restrict d0 = dout + t * n_dim;
    const double* x0 = in + t * k_dim;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double a0 = x0[k];
      double* __restrict dwk = dw + k * n_dim;
      for (std::size_t n = 0; n < n_dim; ++n) dwk[n] += a0 * d0[n];
    }
  }
}

// Backward of layernorm for T rows; adds into dx.
void layernorm_backward(const double* x, const double* mean, const double* rstd,
                        const double* g, const double* dy, std::size_t rows,
                        std::size_t d, double* dx, double* dg, double* db) {
  std::vector<double> dxhat(d);
  for (std::size_t t = 0; t < rows; ++t) {
    const double* xr = x + t * d;
    const double* dyr = dy + t * d;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double xhat = (xr[i] - mean[t]) * rstd[t];
      dxhat[i] = dyr[i] * g[i];
      dg[i] += dyr[i] * xhat;
      db[i] += dyr[i];
      m1 += dxhat[i];
      m2 += dxhat[i] * xhat;
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    double* dxr = dx + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double xhat = (xr[i] - mean[t]) * rstd[t];
      dxr[i] += rstd[t] * (dxhat[i] - m1 - xhat * m2);
    }
  }
}

// Rotary position encoding of the query or key part of one row (n_heads x
// head_dim values) at the given position. inverse applies the transpose.
[[gnu::noinline]] void rope_row(double* v, const double* cos_row,
                                const double* sin_row, std::size_t n_heads,
                                std::size_t head_dim, bool inverse) {
  const std::size_t half = head_dim / 2;
  for (std::size_t h = 0; h < n_heads; ++h) {
    double* vh = v + h * head_dim;
    for (std::size_t i = 0; i < half; ++i) {
      const double x0 = vh[2 * i], x1 = vh[2 * i + 1];
      const double c = cos_row[i], s = inverse ? -sin_row[i] : sin_row[i];
      vh[2 * i] = x0 * c - x1 * s;
      vh[2 * i + 1] = x0 * s + x1 * c;
    }
  }
}

void fill_normal(Rng& rng, std::span<double> out, double std) {
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const double u1 = 1.0 - uniform01(rng);  // (0, 1]
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    out[i] = std * r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < out.size()) out[i + 1] = std * r * std::sin(2.0 * M_PI * u2);
  }
}

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size >= 2 && vocab_size <= Tokenizer::kMaxVocab,
          "vocab_size must be in [2, 512]");
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
          "d_model must be a positive multiple of n_heads");
  require((d_model / n_heads) % 2 == 0, "head dimension must be even for rotary encoding");
  require(n_layers > 0 && d_ff > 0 && context > 0, "model dimensions must be positive");
  require(init_std > 0.0, "init_std must be positive");
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, v = cfg.vocab_size, f = cfg.d_ff;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t o = at;
    at += n;
    return o;
  };
  wte = take(v * d);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    Block b{};
    b.ln1_g = take(d);
    b.ln1_b = take(d);
    b.w_qkv = take(d * 3 * d);
    b.b_qkv = take(3 * d);
    b.w_o = take(d * d);
    b.b_o = take(d);
    b.ln2_g = take(d);
    b.ln2_b = take(d);
    b.w_fc = take(d * f);
    b.b_fc = take(f);
    b.w_proj = take(f * d);
    b.b_proj = take(d);
    blocks.push_back(b);
  }
  lnf_g = take(d);
  lnf_b = take(d);
  w_out = take(d * v);
  b_out = take(v);
  total = at;
}

Policy::Policy(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), layout_((cfg.validate(), cfg)), params_(layout_.total, 0.0) {
  Rng rng(derive_seed(seed, "policy-init"));
  const std::size_t d = cfg_.d_model;
  auto tensor = [&](std::size_t off, std::size_t n) {
    return std::span<double>(params_).subspan(off, n);
  };
  fill_normal(rng, tensor(layout_.wte, cfg_.vocab_size * d), cfg_.init_std);
  const double proj_std = cfg_.init_std / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
  for (const auto& b : layout_.blocks) {
    std::ranges::fill(tensor(b.ln1_g, d), 1.0);
    std::ranges::fill(tensor(b.ln2_g, d), 1.0);
    fill_normal(rng, tensor(b.w_qkv, d * 3 * d), cfg_.init_std);
    fill_normal(rng, tensor(b.w_o, d * d), proj_std);
    fill_normal(rng, tensor(b.w_fc, d * cfg_.d_ff), cfg_.init_std);
    fill_normal(rng, tensor(b.w_proj, cfg_.d_ff * d), proj_std);
  }
  std::ranges::fill(tensor(layout_.lnf_g, d), 1.0);
  if (!cfg_.zero_output_head)
    fill_normal(rng, tensor(layout_.w_out, d * cfg_.vocab_size), cfg_.init_std);
  build_rope_tables();
}

Policy::Policy(const ModelConfig& cfg, std::vector<double> params)
    : cfg_(cfg), layout_((cfg.validate(), cfg)), params_(std::move(params)) {
  require(params_.size() == layout_.total,
          "parameter count " + std::to_string(params_.size()) +
              " does not match the configuration (" + std::to_string(layout_.total) + ")");
  build_rope_tables();
}

Policy::Policy(const Policy& other)
    : cfg_(other.cfg_),
      layout_(other.layout_),
      params_(other.params_),
      rope_cos_(other.rope_cos_),
      rope_sin_(other.rope_sin_) {}

Policy& Policy::operator=(const Policy& other) {
  if (this != &other) {
    cfg_ = other.cfg_;
    layout_ = other.layout_;
    params_ = other.params_;
    rope_cos_ = other.rope_cos_;
    rope_sin_ = other.rope_sin_;
    reset_stats();
  }
  return *this;
}

void Policy::build_rope_tables() {
  const std::size_t half = cfg_.d_model / cfg_.n_heads / 2;
  rope_cos_.resize(cfg_.context * half);
  rope_sin_.resize(cfg_.context * half);
  for (std::size_t pos = 0; pos < cfg_.context; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      const double angle = static_cast<double>(pos) * freq;
      rope_cos_[pos * half + i] = std::cos(angle);
      rope_sin_[pos * half + i] = std::sin(angle);
    }
  }
}

std::uint64_t Policy::fingerprint() const {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(params_.data()),
                                params_.size() * sizeof(double)));
}

bool Policy::all_finite() const {
  return std::ranges::all_of(params_, [](double x) { return std::isfinite(x); });
}

PassStats Policy::stats() const {
  return {inference_passes_.load(), gradient_passes_.load(), decode_steps_.load()};
}

void Policy::reset_stats() const {
  inference_passes_ = 0;
  gradient_passes_ = 0;
  decode_steps_ = 0;
}

InferenceState::InferenceState(const Policy& policy) : policy_(&policy) {
  const auto& cfg = policy.config();
  keys_.assign(cfg.n_layers, std::vector<double>(cfg.context * cfg.d_model));
  values_.assign(cfg.n_layers, std::vector<double>(cfg.context * cfg.d_model));
}

void InferenceState::truncate(std::size_t n) {
  require(n <= length_, "cannot truncate an inference state forward");
  length_ = n;
}

void InferenceState::feed(std::span<const TokenId> inputs, std::vector<double>* rows,
                          std::size_t rows_from) {
  const auto& cfg = policy_->cfg_;
  const auto& lay = policy_->layout_;
  const double* p = policy_->params_.data();
  const std::size_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  const std::size_t nh = cfg.n_heads, hd = d / nh, half = hd / 2;
  const std::size_t n = inputs.size(), start = length_;
  if (start + n > cfg.context)
    fail(ErrorCode::kInvalidArgument,
         "sequence of length " + std::to_string(start + n) + " exceeds the context length " +
             std::to_string(cfg.context));
  rows_from = std::min(rows_from, n);
  if (rows) rows->resize((n - rows_from) * v);
  if (n == 0) return;

  std::vector<double> x(n * d), h(n * d), qkv(n * 3 * d), y(n * d), tmp(n * d),
      ff(n * f), ffa(n * f), scratch(cfg.context);
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId tok = inputs[i];
    require(tok >= 0 && static_cast<std::size_t>(tok) < v, "token id out of range");
    const double* e = p + lay.wte + static_cast<std::size_t>(tok) * d;
    std::copy(e, e + d, x.data() + i * d);
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& b = lay.blocks[l];
    double* kc = keys_[l].data();
    double* vc = values_[l].data();
    for (std::size_t i = 0; i < n; ++i)
      layernorm_row(x.data() + i * d, p + b.ln1_g, p + b.ln1_b, d, h.data() + i * d, nullptr,
                    nullptr);
    linear_rows(h.data(), p + b.w_qkv, p + b.b_qkv, n, d, 3 * d, qkv.data());
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pos = start + i;
      double* row = qkv.data() + i * 3 * d;
      rope_row(row, &policy_->rope_cos_[pos * half], &policy_->rope_sin_[pos * half], nh, hd,
               false);
      rope_row(row + d, &policy_->rope_cos_[pos * half], &policy_->rope_sin_[pos * half], nh,
               hd, false);
      std::copy(row + d, row + 2 * d, kc + pos * d);
      std::copy(row + 2 * d, row + 3 * d, vc + pos * d);
    }
    for (std::size_t i = 0; i < n; ++i)
      attention_row(qkv.data() + i * 3 * d, kc, vc, d, start + i, nh, hd, y.data() + i * d,
                    nullptr, 0, scratch.data());
    linear_rows(y.data(), p + b.w_o, p + b.b_o, n, d, d, tmp.data());
    add_rows(x.data(), tmp.data(), n * d, x.data());
    for (std::size_t i = 0; i < n; ++i)
      layernorm_row(x.data() + i * d, p + b.ln2_g, p + b.ln2_b, d, h.data() + i * d, nullptr,
                    nullptr);
    linear_rows(h.data(), p + b.w_fc, p + b.b_fc, n, d, f, ff.data());
    gelu_row(ff.data(), n * f, ffa.data());
    linear_rows(ffa.data(), p + b.w_proj, p + b.b_proj, n, f, d, tmp.data());
    add_rows(x.data(), tmp.data(), n * d, x.data());
  }
  if (rows && rows_from < n) {
    const std::size_t m = n - rows_from;
    std::vector<double> logits(m * v);
    for (std::size_t i = 0; i < m; ++i)
      layernorm_row(x.data() + (rows_from + i) * d, p + lay.lnf_g, p + lay.lnf_b, d,
                    h.data() + i * d, nullptr, nullptr);
    linear_rows(h.data(), p + lay.w_out, p + lay.b_out, m, d, v, logits.data());
    for (std::size_t i = 0; i < m; ++i)
      log_softmax_row(logits.data() + i * v, v, rows->data() + i * v);
  }
  length_ += n;
}

namespace {

std::vector<TokenId> model_inputs(std::span<const TokenId> seq) {
  std::vector<TokenId> in;
  in.reserve(seq.size());
  in.push_back(Tokenizer::kBos);
  if (!seq.empty()) in.insert(in.end(), seq.begin(), seq.end() - 1);
  return in;
}

}  // namespace

std::vector<double> Policy::log_distributions(std::span<const TokenId> seq) const {
  require(seq.size() <= cfg_.context,
          "sequence of length " + std::to_string(seq.size()) + " exceeds the context length " +
              std::to_string(cfg_.context));
  std::vector<double> rows;
  if (seq.empty()) return rows;
  record_inference_pass();
  InferenceState state(*this);
  state.feed(model_inputs(seq), &rows);
  return rows;
}

std::vector<double> Policy::logprobs(std::span<const TokenId> seq) const {
  const std::vector<double> rows = log_distributions(seq);
  std::vector<double> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    require(seq[t] >= 0 && static_cast<std::size_t>(seq[t]) < cfg_.vocab_size,
            "token id out of range");
    out[t] = rows[t * cfg_.vocab_size + static_cast<std::size_t>(seq[t])];
  }
  return out;
}

double Policy::accumulate_gradient(std::span<const TokenId> seq,
                                   std::span<const double> coeff,
                                   std::span<double> grad) const {
  require(coeff.size() == seq.size(), "one coefficient per token is required");
  require(grad.size() == params_.size(), "gradient buffer has the wrong size");
  require(seq.size() <= cfg_.context,
          "sequence of length " + std::to_string(seq.size()) + " exceeds the context length " +
              std::to_string(cfg_.context));
  const std::size_t T = seq.size();
  if (T == 0) return 0.0;
  gradient_passes_.fetch_add(1);

  const std::size_t d = cfg_.d_model, f = cfg_.d_ff, v = cfg_.vocab_size;
  const std::size_t nh = cfg_.n_heads, hd = d / nh, half = hd / 2, L = cfg_.n_layers;
  const double* p = params_.data();
  double* g = grad.data();
  const auto& lay = layout_;
  const std::vector<TokenId> in = model_inputs(seq);
  for (TokenId tok : seq)
    require(tok >= 0 && static_cast<std::size_t>(tok) < v, "token id out of range");

  struct LayerCache {
    std::vector<double> x_in, mean1, rstd1, h1, qkv, att, y, x_mid, mean2, rstd2, h2,
        f_pre, f_act;
  };
  std::vector<LayerCache> cache(L);
  std::vector<double> x(T * d), tmp(T * d), scratch(T);

  for (std::size_t t = 0; t < T; ++t) {
    const double* e = p + lay.wte + static_cast<std::size_t>(in[t]) * d;
    std::copy(e, e + d, x.data() + t * d);
  }

  for (std::size_t l = 0; l < L; ++l) {
    const auto& b = lay.blocks[l];
    auto& c = cache[l];
    c.x_in = x;
    c.mean1.resize(T);
    c.rstd1.resize(T);
    c.h1.resize(T * d);
    c.qkv.resize(T * 3 * d);
    c.att.assign(nh * T * T, 0.0);
    c.y.resize(T * d);
    c.mean2.resize(T);
    c.rstd2.resize(T);
    c.h2.resize(T * d);
    c.f_pre.resize(T * f);
    c.f_act.resize(T * f);
    for (std::size_t t = 0; t < T; ++t)
      layernorm_row(x.data() + t * d, p + b.ln1_g, p + b.ln1_b, d, c.h1.data() + t * d,
                    &c.mean1[t], &c.rstd1[t]);
    linear_rows(c.h1.data(), p + b.w_qkv, p + b.b_qkv, T, d, 3 * d, c.qkv.data());
    for (std::size_t t = 0; t < T; ++t) {
      double* row = c.qkv.data() + t * 3 * d;
      rope_row(row, &rope_cos_[t * half], &rope_sin_[t * half], nh, hd, false);
      rope_row(row + d, &rope_cos_[t * half], &rope_sin_[t * half], nh, hd, false);
    }
    for (std::size_t t = 0; t < T; ++t)
      attention_row(c.qkv.data() + t * 3 * d, c.qkv.data() + d, c.qkv.data() + 2 * d, 3 * d,
                    t, nh, hd, c.y.data() + t * d, c.att.data() + t * T, T * T,
                    scratch.data());
    linear_rows(c.y.data(), p + b.w_o, p + b.b_o, T, d, d, tmp.data());
    add_rows(x.data(), tmp.data(), T * d, x.data());
    c.x_mid = x;
    for (std::size_t t = 0; t < T; ++t)
      layernorm_row(x.data() + t * d, p + b.ln2_g, p + b.ln2_b, d, c.h2.data() + t * d,
                    &c.mean2[t], &c.rstd2[t]);
    linear_rows(c.h2.data(), p + b.w_fc, p + b.b_fc, T, d, f, c.f_pre.data());
    gelu_row(c.f_pre.data(), T * f, c.f_act.data());
    linear_rows(c.f_act.data(), p + b.w_proj, p + b.b_proj, T, f, d, tmp.data());
    add_rows(x.data(), tmp.data(), T * d, x.data());
  }

  std::vector<double> meanf(T), rstdf(T), hf(T * d);
  for (std::size_t t = 0; t < T; ++t)
    layernorm_row(x.data() + t * d, p + lay.lnf_g, p + lay.lnf_b, d, hf.data() + t * d,
                  &meanf[t], &rstdf[t]);
  // Only rows with a coefficient reach the output head.
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t < T; ++t)
    if (coeff[t] != 0.0) rows.push_back(t);
  const std::size_t R = rows.size();
  std::vector<double> hr(R * d), logits(R * v), logp(R * v);
  for (std::size_t r = 0; r < R; ++r)
    std::copy_n(hf.data() + rows[r] * d, d, hr.data() + r * d);
  linear_rows(hr.data(), p + lay.w_out, p + lay.b_out, R, d, v, logits.data());
  for (std::size_t r = 0; r < R; ++r)
    log_softmax_row(logits.data() + r * v, v, logp.data() + r * v);

  double value = 0.0;
  std::vector<double> dlogits(R * v, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t t = rows[r];
    const std::size_t target = static_cast<std::size_t>(seq[t]);
    value += coeff[t] * logp[r * v + target];
    double* dl = dlogits.data() + r * v;
    for (std::size_t i = 0; i < v; ++i) dl[i] = -coeff[t] * std::exp(logp[r * v + i]);
    dl[target] += coeff[t];
  }

  // Backward.
  std::vector<double> dhr(R * d, 0.0), dhf(T * d, 0.0), dx(T * d, 0.0);
  linear_backward(hr.data(), p + lay.w_out, dlogits.data(), R, d, v, dhr.data(),
                  g + lay.w_out, g + lay.b_out);
  for (std::size_t r = 0; r < R; ++r)
    std::copy_n(dhr.data() + r * d, d, dhf.data() + rows[r] * d);
  layernorm_backward(x.data(), meanf.data(), rstdf.data(), p + lay.lnf_g, dhf.data(), T, d,
                     dx.data(), g + lay.lnf_g, g + lay.lnf_b);

  std::vector<double> dh(T * d), dfa(T * f), dfp(T * f), dy(T * d), dqkv(T * 3 * d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t li = L; li-- > 0;) {
    const auto& b = lay.blocks[li];
    const auto& c = cache[li];

    // MLP: x_out = x_mid + proj(gelu(fc(ln2(x_mid)))).
    std::ranges::fill(dfa, 0.0);
    linear_backward(c.f_act.data(), p + b.w_proj, dx.data(), T, f, d, dfa.data(),
                    g + b.w_proj, g + b.b_proj);
    for (std::size_t i = 0; i < T * f; ++i) dfp[i] = dfa[i] * gelu_grad(c.f_pre[i]);
    std::ranges::fill(dh, 0.0);
    linear_backward(c.h2.data(), p + b.w_fc, dfp.data(), T, d, f, dh.data(), g + b.w_fc,
                    g + b.b_fc);
    layernorm_backward(c.x_mid.data(), c.mean2.data(), c.rstd2.data(), p + b.ln2_g,
                       dh.data(), T, d, dx.data(), g + b.ln2_g, g + b.ln2_b);

    // Attention: x_mid = x_in + o(attn(rope(qkv(ln1(x_in))))).
    std::ranges::fill(dy, 0.0);
    linear_backward(c.y.data(), p + b.w_o, dx.data(), T, d, d, dy.data(), g + b.w_o,
                    g + b.b_o);
    std::ranges::fill(dqkv, 0.0);
    for (std::size_t h = 0; h < nh; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t t = 0; t < T; ++t) {
        const double* att = c.att.data() + h * T * T + t * T;
        const double* dyt = dy.data() + t * d + off;
        const double* qt = c.qkv.data() + t * 3 * d + off;
        double* dqt = dqkv.data() + t * 3 * d + off;
        double dot_sum = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          const double* vj = c.qkv.data() + j * 3 * d + 2 * d + off;
          const double da = dot(dyt, vj, hd);
          scratch[j] = da;
          dot_sum += att[j] * da;
        }
        for (std::size_t j = 0; j <= t; ++j) {
          const double a = att[j];
          const double ds = a * (scratch[j] - dot_sum) * scale;
          const double* kj = c.qkv.data() + j * 3 * d + d + off;
          double* dkj = dqkv.data() + j * 3 * d + d + off;
          double* dvj = dqkv.data() + j * 3 * d + 2 * d + off;
          for (std::size_t i = 0; i < hd; ++i) {
            dvj[i] += a * dyt[i];
            dqt[i] += ds * kj[i];
            dkj[i] += ds * qt[i];
          }
        }
      }
    }
    // Gradients so far are with respect to the rotated queries and keys.
    for (std::size_t t = 0; t < T; ++t) {
      double* row = dqkv.data() + t * 3 * d;
      rope_row(row, &rope_cos_[t * half], &rope_sin_[t * half], nh, hd, true);
      rope_row(row + d, &rope_cos_[t * half], &rope_sin_[t * half], nh, hd, true);
    }
    std::ranges::fill(dh, 0.0);
    linear_backward(c.h1.data(), p + b.w_qkv, dqkv.data(), T, d, 3 * d, dh.data(),
                    g + b.w_qkv, g + b.b_qkv);
    layernorm_backward(c.x_in.data(), c.mean1.data(), c.rstd1.data(), p + b.ln1_g,
                       dh.data(), T, d, dx.data(), g + b.ln1_g, g + b.ln1_b);
  }

  for (std::size_t t = 0; t < T; ++t) {
    double* dwte = g + lay.wte + static_cast<std::size_t>(in[t]) * d;
    for (std::size_t i = 0; i < d; ++i) dwte[i] += dx[t * d + i];
  }
  return value;
}

void SamplerConfig::validate() const {
  require(temperature > 0.0, "temperature must be positive");
  require(top_p > 0.0 && top_p <= 1.0, "top_p must be in (0, 1]");
}

Prefix prefill(const Policy& policy, std::span<const TokenId> prompt) {
  require(prompt.size() < policy.config().context, "prompt does not fit the context");
  Prefix p{InferenceState(policy), {}, prompt.size()};
  std::vector<TokenId> inputs;
  inputs.reserve(prompt.size() + 1);
  inputs.push_back(Tokenizer::kBos);
  inputs.insert(inputs.end(), prompt.begin(), prompt.end());
  p.state.feed(inputs, &p.last_row, inputs.size() - 1);
  return p;
}

std::vector<TokenId> sample(const Policy& policy, std::span<const TokenId> prompt,
                            const SamplerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return sample(prefill(policy, prompt), cfg, seed);
}

std::vector<TokenId> sample(const Prefix& prefix, const SamplerConfig& cfg,
                            std::uint64_t seed) {
  cfg.validate();
  const Policy& policy = prefix.state.policy();
  const auto& mc = policy.config();
  const std::size_t prompt_size = prefix.prompt_length;
  Rng rng(seed);
  InferenceState state = prefix.state;
  std::vector<double> rows = prefix.last_row;

  const std::size_t v = mc.vocab_size;
  std::vector<TokenId> out;
  std::vector<double> probs(v);
  std::vector<std::size_t> order(v);
  while (out.size() < cfg.max_new_tokens && prompt_size + out.size() < mc.context) {
    const double* lp = rows.data() + rows.size() - v;
    TokenId next = 0;
    if (cfg.greedy) {
      next = static_cast<TokenId>(std::max_element(lp, lp + v) - lp);
    } else {
      double mx = -INFINITY;
      for (std::size_t i = 0; i < v; ++i) mx = std::max(mx, lp[i] / cfg.temperature);
      double sum = 0.0;
      for (std::size_t i = 0; i < v; ++i) {
        probs[i] = std::exp(lp[i] / cfg.temperature - mx);
        sum += probs[i];
      }
      for (auto& q : probs) q /= sum;
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
      // Smallest prefix of the sorted distribution whose mass reaches top_p.
      std::size_t keep = v;
      if (cfg.top_p < 1.0) {
        double cum = 0.0;
        for (std::size_t i = 0; i < v; ++i) {
          cum += probs[order[i]];
          if (cum >= cfg.top_p) {
            keep = i + 1;
            break;
          }
        }
      }
      double mass = 0.0;
      for (std::size_t i = 0; i < keep; ++i) mass += probs[order[i]];
      const double u = uniform01(rng) * mass;
      double acc = 0.0;
      next = static_cast<TokenId>(order[keep - 1]);
      for (std::size_t i = 0; i < keep; ++i) {
        acc += probs[order[i]];
        if (u < acc) {
          next = static_cast<TokenId>(order[i]);
          break;
        }
      }
    }
    out.push_back(next);
    policy.record_decode_step();
    if (next == Tokenizer::kEos) break;
    if (out.size() >= cfg.max_new_tokens || prompt_size + out.size() >= mc.context) break;
    const TokenId in[1] = {next};
    state.feed(in, &rows);
  }
  return out;
}

GradientResult gradient(const Policy& policy, const LogprobObjective& objective) {
  GradientResult r;
  r.grad.assign(policy.num_params(), 0.0);
  r.value = objective.constant;
  for (const auto& term : objective.terms) {
    if (std::ranges::all_of(term.coeff, [](double c) { return c == 0.0; })) {
      require(term.coeff.size() == term.tokens.size(), "one coefficient per token is required");
      continue;
    }
    r.value += policy.accumulate_gradient(term.tokens, term.coeff, r.grad);
  }
  if (!std::isfinite(r.value)) fail(ErrorCode::kNumeric, "non-finite loss");
  if (!std::ranges::all_of(r.grad, [](double x) { return std::isfinite(x); }))
    fail(ErrorCode::kNumeric, "non-finite gradient");
  return r;
}

double evaluate(const Policy& policy, const LogprobObjective& objective) {
  double value = objective.constant;
  for (const auto& term : objective.terms) {
    require(term.coeff.size() == term.tokens.size(), "one coefficient per token is required");
    if (std::ranges::all_of(term.coeff, [](double c) { return c == 0.0; })) continue;
    const auto lp = policy.logprobs(term.tokens);
    for (std::size_t t = 0; t < lp.size(); ++t)
      if (term.coeff[t] != 0.0) value += term.coeff[t] * lp[t];
  }
  return value;
}

}  // namespace cfcredit
