// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "cfcredit/tokenizer.hpp"

namespace cfcredit {

// A prompt and one completion y = (r, a). tokens.boundary is the first token
// of the answer span a (the final answer marker through the end, EOS
// included); without a marker the answer span is empty.
struct Completion {
  std::string prompt_text;
  std::string text;  // detokenized completion, without EOS
  TokenizedSequence prompt;
  TokenizedSequence tokens;

  std::size_t answer_length() const { return tokens.size() - tokens.boundary; }
  std::string reasoning_text() const;
  std::vector<TokenId> full_sequence() const;  // prompt ++ completion
};

// Offsets follow the detokenized width of every id, so special tokens keep
// their place without consuming characters.
TokenizedSequence sequence_from_ids(const Tokenizer& tok, std::span<const TokenId> ids);

// Index of the first token at or after the last answer marker, or size().
std::size_t answer_boundary(const TokenizedSequence& seq, const std::string& text);

Completion make_completion(const Tokenizer& tok, const std::string& prompt_text,
                           std::span<const TokenId> completion_ids);
Completion make_completion(const Tokenizer& tok, const std::string& prompt_text,
                           const std::string& completion_text, bool with_eos);

}  // namespace cfcredit
