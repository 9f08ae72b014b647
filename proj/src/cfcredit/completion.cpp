// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/completion.hpp"

#include "cfcredit/corpus.hpp"

namespace cfcredit {

std::string Completion::reasoning_text() const {
  if (tokens.boundary >= tokens.size()) return text;
  return text.substr(0, tokens.char_offsets[tokens.boundary].start);
}

std::vector<TokenId> Completion::full_sequence() const {
  std::vector<TokenId> out = prompt.token_ids;
  out.insert(out.end(), tokens.token_ids.begin(), tokens.token_ids.end());
  return out;
}

TokenizedSequence sequence_from_ids(const Tokenizer& tok, std::span<const TokenId> ids) {
  TokenizedSequence seq;
  seq.token_ids.assign(ids.begin(), ids.end());
  std::size_t at = 0;
  for (TokenId id : ids) {
    const std::size_t width = tok.detokenize(std::span<const TokenId>(&id, 1)).size();
    seq.char_offsets.push_back({at, at + width});
    at += width;
  }
  seq.boundary = seq.token_ids.size();
  return seq;
}

std::size_t answer_boundary(const TokenizedSequence& seq, const std::string& text) {
  const auto pos = text.rfind(kAnswerMarker);
  if (pos == std::string::npos) return seq.size();
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq.char_offsets[i].end > pos) return i;
  return seq.size();
}

Completion make_completion(const Tokenizer& tok, const std::string& prompt_text,
                           std::span<const TokenId> completion_ids) {
  Completion c;
  c.prompt_text = prompt_text;
  c.prompt = tok.tokenize(prompt_text);
  c.tokens = sequence_from_ids(tok, completion_ids);
  c.text = tok.detokenize(completion_ids);
  c.tokens.boundary = answer_boundary(c.tokens, c.text);
  return c;
}

Completion make_completion(const Tokenizer& tok, const std::string& prompt_text,
                           const std::string& completion_text, bool with_eos) {
  std::vector<TokenId> ids = tok.tokenize(completion_text).token_ids;
  if (with_eos) ids.push_back(Tokenizer::kEos);
  return make_completion(tok, prompt_text, ids);
}

}  // namespace cfcredit
