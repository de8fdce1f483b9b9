// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vulnscan/corpus.hpp"
#include "vulnscan/evm_bytecode.hpp"

namespace vulnscan::tokenizer {

using TokenId = std::uint32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kOovId = 1;
inline constexpr std::size_t kDefaultMaxSequenceLength = 4100;

/// Token text -> id. Ids 0 and 1 are reserved for padding and
/// out-of-vocabulary; real tokens start at 2.
class Vocabulary {
 public:
  Vocabulary();

  /// Assigns ids in order of first appearance across the records.
  static Vocabulary fit(const std::vector<corpus::ContractRecord>& records);
  static Vocabulary fit(const std::vector<evm::NormalizedSequence>& sequences);

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id_of(evm::Token token) const { return by_code_[token.code()]; }
  /// kOovId for unknown text.
  TokenId id_of(const std::string& text) const;
  const std::string& token_text(TokenId id) const { return id_to_token_.at(id); }

  /// 16 hex digits identifying the serialized vocabulary.
  std::string fingerprint() const;
  std::string serialize() const;
  static Vocabulary parse(const std::string& text);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  void add(const std::string& text);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::array<TokenId, evm::kTokenCodeCount> by_code_{};
};

/// Fixed-length id sequence; positions at and beyond true_length are 0.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::size_t true_length = 0;

  bool operator==(const TokenSequence&) const = default;
};

/// Maps tokens through `vocab` (unknown -> kOovId), keeps the head when the
/// sequence is longer than max_sequence_length, right-pads with 0 otherwise.
TokenSequence encode(const evm::NormalizedSequence& seq, const Vocabulary& vocab,
                     std::size_t max_sequence_length = kDefaultMaxSequenceLength);

/// Token texts of the unpadded prefix.
std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab);

/// `<token>\t<id>` lines, reserved entries `<PAD>\t0` and `<OOV>\t1` first.
void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

}  // namespace vulnscan::tokenizer
