// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small causal transformer policy (pre-LN, rotary positions, GELU MLP) in
// 64-bit floats, with exact reverse-mode gradients written out by hand.
//
// Every kernel computes output rows independently and in a fixed order, so a
// position's activations do not depend on how many rows were processed
// together. Incremental decoding, prefix reuse and full passes therefore
// agree bit for bit.

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cfcredit/tokenizer.hpp"

namespace cfcredit {

struct ModelConfig {
  std::size_t vocab_size = 100;
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t d_ff = 256;
  std::size_t context = 256;
  double init_std = 0.02;
  // A zero output head makes the initial predictive distribution exactly
  // uniform over the vocabulary.
  bool zero_output_head = true;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Offsets of every tensor inside the flat parameter vector.
struct ParamLayout {
  struct Block {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
    std::size_t ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  std::size_t wte = 0;
  std::vector<Block> blocks;
  std::size_t lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;
  std::size_t total = 0;

  explicit ParamLayout(const ModelConfig& cfg);
};

struct PassStats {
  std::uint64_t inference_passes = 0;  // gradient-free scoring passes
  std::uint64_t gradient_passes = 0;   // passes that allocate backward state
  std::uint64_t decode_steps = 0;      // single-token sampling steps
};

class Policy {
 public:
  Policy(const ModelConfig& cfg, std::uint64_t seed);
  Policy(const ModelConfig& cfg, std::vector<double> params);
  Policy(const Policy& other);
  Policy& operator=(const Policy& other);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t num_params() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }

  // Hash of the raw parameter bytes.
  std::uint64_t fingerprint() const;
  bool all_finite() const;

  PassStats stats() const;
  void reset_stats() const;
  void record_inference_pass() const { inference_passes_.fetch_add(1); }
  void record_decode_step() const { decode_steps_.fetch_add(1); }

  // Entry t is log p(seq[t] | BOS, seq[0..t)). Throws if seq exceeds the
  // context length.
  std::vector<double> logprobs(std::span<const TokenId> seq) const;
  // Full log-softmax rows, seq.size() x vocab_size, same conditioning.
  std::vector<double> log_distributions(std::span<const TokenId> seq) const;

  // Adds d/dparams of sum_t coeff[t] * log p(seq[t] | ...) into grad and
  // returns the weighted sum. grad must have num_params() entries.
  double accumulate_gradient(std::span<const TokenId> seq,
                             std::span<const double> coeff,
                             std::span<double> grad) const;

 private:
  friend class InferenceState;

  void build_rope_tables();

  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<double> params_;
  std::vector<double> rope_cos_, rope_sin_;  // context x head_dim / 2
  mutable std::atomic<std::uint64_t> inference_passes_{0};
  mutable std::atomic<std::uint64_t> gradient_passes_{0};
  mutable std::atomic<std::uint64_t> decode_steps_{0};
};

// Key/value cache over a growing input prefix. Inputs are model inputs: the
// first must be BOS. Holds a reference to the policy; do not outlive it.
class InferenceState {
 public:
  explicit InferenceState(const Policy& policy);

  std::size_t length() const { return length_; }
  const Policy& policy() const { return *policy_; }

  // Runs positions [length, length + inputs.size()). When rows is non-null it
  // receives one log-softmax row per new position from rows_from on.
  void feed(std::span<const TokenId> inputs, std::vector<double>* rows,
            std::size_t rows_from = 0);
  void truncate(std::size_t n);

 private:
  const Policy* policy_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_;    // per layer, context x d_model
  std::vector<std::vector<double>> values_;  // per layer, context x d_model
};

struct SamplerConfig {
  double temperature = 0.6;
  double top_p = 0.95;
  std::size_t max_new_tokens = 64;
  bool greedy = false;

  void validate() const;
};

// A prompt already run through the model, shared by several samples.
struct Prefix {
  InferenceState state;
  std::vector<double> last_row;  // distribution of the first new token
  std::size_t prompt_length = 0;
};

Prefix prefill(const Policy& policy, std::span<const TokenId> prompt);

// Continues prompt until EOS or max_new_tokens (or the context fills).
// Returns only the new tokens; EOS is included when produced.
std::vector<TokenId> sample(const Policy& policy, std::span<const TokenId> prompt,
                            const SamplerConfig& cfg, std::uint64_t seed);
std::vector<TokenId> sample(const Prefix& prefix, const SamplerConfig& cfg,
                            std::uint64_t seed);

// Linear functionals of token log-probabilities: the loss form used by
// warm-start cross-entropy and by the policy-gradient objectives.
struct LogprobTerm {
  std::vector<TokenId> tokens;
  std::vector<double> coeff;  // one per token; zero entries are ignored
};

struct LogprobObjective {
  std::vector<LogprobTerm> terms;
  double constant = 0.0;
};

struct GradientResult {
  double value = 0.0;
  std::vector<double> grad;
};

// Exact gradient of the objective. Throws ErrorCode::kNumeric on a
// non-finite value or gradient.
GradientResult gradient(const Policy& policy, const LogprobObjective& objective);
// Same value through the gradient-free path.
double evaluate(const Policy& policy, const LogprobObjective& objective);

}  // namespace cfcredit
