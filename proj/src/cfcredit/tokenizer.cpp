// Copyright 2026 The cfcredit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cfcredit/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "cfcredit/corpus.hpp"
#include "cfcredit/error.hpp"

namespace cfcredit {
namespace {

constexpr TokenId kNewline = 4;
constexpr TokenId kFirstPrintable = 5;  // ' '
constexpr TokenId kFirstWord = kFirstPrintable + 95;

bool is_alpha(unsigned char c) { return std::isalpha(c) != 0; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

// Length of the UTF-8 sequence starting with c, clamped to at least 1.
std::size_t utf8_length(unsigned char c) {
  if (c >= 0xF0) return 4;
  if (c >= 0xE0) return 3;
  if (c >= 0xC0) return 2;
  return 1;
}

}  // namespace

Tokenizer::Tokenizer(TokenizerKind kind)
    : Tokenizer(kind, kind == TokenizerKind::kWord ? default_words()
                                                   : std::vector<std::string>{}) {}

Tokenizer::Tokenizer(TokenizerKind kind, std::vector<std::string> words)
    : kind_(kind) {
  symbols_ = {"<pad>", "<bos>", "<eos>", "<unk>", "\n"};
  for (int c = 32; c <= 126; ++c) symbols_.emplace_back(1, static_cast<char>(c));
  if (kind_ == TokenizerKind::kWord) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    std::erase_if(words, [](const std::string& w) {
      return w.size() < 2 ||
             !std::all_of(w.begin(), w.end(),
                          [](unsigned char c) { return is_alpha(c); });
    });
    require(kFirstWord + words.size() <= kMaxVocab,
            "word list exceeds the vocabulary limit");
    for (const auto& w : words) {
      word_ids_.push_back(static_cast<TokenId>(symbols_.size()));
      symbols_.push_back(w);
    }
    words_ = std::move(words);
    require(symbols_.size() + (kNumberTokens - 10) <= kMaxVocab,
            "word list leaves no room for number tokens");
    first_number_ = static_cast<TokenId>(symbols_.size());
    for (int v = 10; v < kNumberTokens; ++v) symbols_.push_back(std::to_string(v));
  }
}

const std::string& Tokenizer::symbol(TokenId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < symbols_.size(),
          "token id out of range");
  return symbols_[static_cast<std::size_t>(id)];
}

TokenId Tokenizer::char_id(unsigned char c) const {
  if (c == '\n') return kNewline;
  if (c >= 32 && c <= 126) return kFirstPrintable + (c - 32);
  return kUnk;
}

TokenizedSequence Tokenizer::tokenize(std::string_view text) const {
  TokenizedSequence out;
  out.token_ids.reserve(text.size());
  out.char_offsets.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (kind_ == TokenizerKind::kWord && is_alpha(c)) {
      std::size_t j = i;
      while (j < text.size() && is_alpha(static_cast<unsigned char>(text[j]))) ++j;
      const std::string_view run = text.substr(i, j - i);
      auto it = std::lower_bound(words_.begin(), words_.end(), run);
      if (it != words_.end() && *it == run) {
        out.token_ids.push_back(word_ids_[static_cast<std::size_t>(it - words_.begin())]);
        out.char_offsets.push_back({i, j});
        i = j;
        continue;
      }
    }
    if (kind_ == TokenizerKind::kWord && is_digit(c)) {
      std::size_t j = i;
      while (j < text.size() && is_digit(static_cast<unsigned char>(text[j]))) ++j;
      // Two-digit numerals without a leading zero are single tokens.
      if (j - i == 2 && c != '0') {
        const int v = (text[i] - '0') * 10 + (text[i + 1] - '0');
        out.token_ids.push_back(first_number_ + (v - 10));
        out.char_offsets.push_back({i, j});
        i = j;
        continue;
      }
    }
    if (c < 0x80) {
      out.token_ids.push_back(char_id(c));
      out.char_offsets.push_back({i, i + 1});
      ++i;
    } else {
      const std::size_t len = std::min(utf8_length(c), text.size() - i);
      out.token_ids.push_back(kUnk);
      out.char_offsets.push_back({i, i + len});
      i += len;
    }
  }
  out.boundary = out.token_ids.size();
  return out;
}

std::string Tokenizer::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    switch (id) {
      case kPad:
      case kBos:
      case kEos:
        break;
      case kUnk:
        out += "\xEF\xBF\xBD";
        break;
      default:
        out += symbol(id);
    }
  }
  return out;
}

std::vector<std::string> Tokenizer::default_words() { return corpus_vocabulary(); }

}  // namespace cfcredit
