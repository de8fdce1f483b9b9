// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vulnscan::evm {

using RawBytecode = std::vector<std::uint8_t>;

/// One opcode token: a byte value 0x00-0xff, or the invalid sentinel XX for
/// bytes the instruction set does not assign.
class Token {
 public:
  static constexpr std::uint16_t kInvalidCode = 0x100;

  constexpr Token() = default;
  constexpr explicit Token(std::uint8_t byte) : code_(byte) {}

  static constexpr Token invalid() {
    Token t;
    t.code_ = kInvalidCode;
    return t;
  }

  constexpr bool is_invalid() const { return code_ == kInvalidCode; }
  // Byte value; meaningless for the invalid sentinel.
  constexpr std::uint8_t byte() const { return static_cast<std::uint8_t>(code_); }
  // Dense index in [0, 257), the sentinel last.
  constexpr std::uint16_t code() const { return code_; }

  constexpr auto operator<=>(const Token&) const = default;

 private:
  std::uint16_t code_ = 0;
};

inline constexpr std::size_t kTokenCodeCount = 257;

using OpSequence = std::vector<Token>;

/// Opcode tokens after family merging. Holds no PUSH2-32, DUP2-16,
/// SWAP2-16 or LOG1-4 tokens.
struct NormalizedSequence {
  std::vector<Token> tokens;

  bool operator==(const NormalizedSequence&) const = default;
};

// Family ranges merged onto their first member by normalize().
struct OpcodeFamily {
  std::uint8_t first;
  std::uint8_t last;
  std::string_view name;
};

inline constexpr std::array<OpcodeFamily, 4> kMergedFamilies{{
    {0x60, 0x7f, "PUSH"},
    {0x80, 0x8f, "DUP"},
    {0x90, 0x9f, "SWAP"},
    {0xa0, 0xa4, "LOG"},
}};

/// Byte -> (mnemonic, operand byte count) for one instruction set revision.
class OpcodeTable {
 public:
  struct Entry {
    std::string mnemonic;
    std::uint8_t operand_bytes = 0;
  };

  /// Parses `<hex_byte> <MNEMONIC> <operand_count>` records; `#` starts a
  /// comment line. Rejects duplicate bytes and PUSHk entries whose operand
  /// count is not k.
  static OpcodeTable parse(std::string_view text);
  static OpcodeTable load(const std::string& path);

  bool contains(std::uint8_t byte) const { return entries_[byte].has_value(); }
  const std::optional<Entry>& entry(std::uint8_t byte) const { return entries_[byte]; }
  std::size_t size() const;

  /// Mnemonic for a token; "XX" for the sentinel and unassigned bytes.
  std::string mnemonic(Token token) const;

 private:
  std::array<std::optional<Entry>, 256> entries_{};
};

/// The Cancun instruction set table compiled in from data/opcodes_cancun.txt.
const OpcodeTable& default_opcode_table();

/// Decodes hex text with an optional "0x" prefix. Throws ParseError carrying
/// the offending character position on odd length or a non-hex digit.
RawBytecode parse_hex(std::string_view text);

/// Linear sweep. PUSHk consumes its k operand bytes (a truncated operand runs
/// to the end of code); unassigned bytes become the XX sentinel.
OpSequence disassemble(std::span<const std::uint8_t> raw,
                       const OpcodeTable& table = default_opcode_table());

/// Maps a single token onto its family head; identity outside the families.
Token normalize_token(Token token);

NormalizedSequence normalize(const OpSequence& ops);

/// Space-separated lowercase hex pairs, "xx" for the sentinel.
std::string render(const NormalizedSequence& seq);
std::string render_token(Token token);

/// Inverse of render(). Every token must be "xx" or an assigned, already
/// normalized byte of `table`; otherwise ParseError at the token index.
NormalizedSequence parse_normalized(std::string_view text,
                                    const OpcodeTable& table = default_opcode_table());

/// parse_hex -> disassemble -> normalize, the single preprocessing path used
/// by corpus construction, the CLI, and the prediction service.
NormalizedSequence preprocess(std::string_view hex,
                              const OpcodeTable& table = default_opcode_table());

}  // namespace vulnscan::evm
