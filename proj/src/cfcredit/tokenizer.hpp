// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfcredit {

using TokenId = std::int32_t;

struct CharRange {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  bool empty() const { return end <= start; }
  bool intersects(const CharRange& o) const {
    return start < o.end && o.start < end;
  }
  friend bool operator==(const CharRange&, const CharRange&) = default;
};

// Tokens of one text with the character range each token was read from.
// `boundary` is the index of the first answer token; for plain text it equals
// the token count.
struct TokenizedSequence {
  std::vector<TokenId> token_ids;
  std::vector<CharRange> char_offsets;
  std::size_t boundary = 0;

  std::size_t size() const { return token_ids.size(); }
};

enum class TokenizerKind { kCharacter, kWord };

// Fixed vocabulary: four specials, newline, printable ASCII, and in word mode
// a list of whole words plus the two-digit numerals. Any byte sequence
// outside the alphabet becomes UNK, one UNK per UTF-8 code point.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kMaxVocab = 512;
  // Word mode also reads the numerals 10..kNumberTokens-1 as single tokens.
  static constexpr int kNumberTokens = 100;

  explicit Tokenizer(TokenizerKind kind = TokenizerKind::kCharacter);
  Tokenizer(TokenizerKind kind, std::vector<std::string> words);

  TokenizerKind kind() const { return kind_; }
  std::size_t vocab_size() const { return symbols_.size(); }
  const std::string& symbol(TokenId id) const;

  TokenizedSequence tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> ids) const;

  // Default word list: the corpus template vocabulary.
  static std::vector<std::string> default_words();

 private:
  TokenId char_id(unsigned char c) const;

  TokenizerKind kind_;
  std::vector<std::string> symbols_;
  std::vector<std::string> words_;  // sorted, for lookup
  std::vector<TokenId> word_ids_;
  TokenId first_number_ = 0;  // id of "10" in word mode
};

}  // namespace cfcredit
