// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "vulnscan/evm_bytecode.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "opcode_table_data.hpp"
#include "vulnscan/error.hpp"

namespace vulnscan::evm {
namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

constexpr char kHexDigits[] = "0123456789abcdef";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

bool is_push(std::uint8_t byte) { return byte >= 0x60 && byte <= 0x7f; }

}  // namespace

OpcodeTable OpcodeTable::parse(std::string_view text) {
  OpcodeTable table;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto eol = text.find('\n');
    std::string_view line = trim(text.substr(0, eol));
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    if (line.empty() || line.front() == '#') continue;

    std::istringstream fields{std::string(line)};
    std::string byte_text, mnemonic, count_text, extra;
    if (!(fields >> byte_text >> mnemonic >> count_text) || (fields >> extra)) {
      throw ParseError("opcode table line " + std::to_string(line_no) +
                           ": expected '<hex_byte> <MNEMONIC> <operand_count>'",
                       {}, line_no);
    }
    unsigned byte = 0;
    unsigned count = 0;
    auto [bp, be] = std::from_chars(byte_text.data(), byte_text.data() + byte_text.size(), byte, 16);
    auto [cp, ce] = std::from_chars(count_text.data(), count_text.data() + count_text.size(), count);
    if (be != std::errc{} || bp != byte_text.data() + byte_text.size() || byte > 0xff) {
      throw ParseError("opcode table line " + std::to_string(line_no) + ": bad byte '" +
                           byte_text + "'",
                       {}, line_no);
    }
    if (ce != std::errc{} || cp != count_text.data() + count_text.size() || count > 32) {
      throw ParseError("opcode table line " + std::to_string(line_no) +
                           ": bad operand count '" + count_text + "'",
                       {}, line_no);
    }
    const auto b = static_cast<std::uint8_t>(byte);
    const unsigned expected = is_push(b) ? b - 0x5fu : 0u;
    if (count != expected) {
      throw ParseError("opcode table line " + std::to_string(line_no) + ": byte " + byte_text +
                           " must carry " + std::to_string(expected) + " operand bytes",
                       {}, line_no);
    }
    if (table.entries_[b]) {
      throw ParseError("opcode table line " + std::to_string(line_no) + ": duplicate byte " +
                           byte_text,
                       {}, line_no);
    }
    table.entries_[b] = Entry{mnemonic, static_cast<std::uint8_t>(count)};
  }
  return table;
}

OpcodeTable OpcodeTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open opcode table " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::size_t OpcodeTable::size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.has_value();
  return n;
}

std::string OpcodeTable::mnemonic(Token token) const {
  if (token.is_invalid() || !entries_[token.byte()]) return "XX";
  return entries_[token.byte()]->mnemonic;
}

const OpcodeTable& default_opcode_table() {
  static const OpcodeTable table = OpcodeTable::parse(detail::kDefaultOpcodeTable);
  return table;
}

RawBytecode parse_hex(std::string_view text) {
  std::size_t offset = 0;
  if (text.size() >= 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
    offset = 2;
  }
  const std::string_view digits = text.substr(offset);
  // Report the first bad digit before the length so "6G" points at the G.
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (hex_value(digits[i]) < 0) {
      throw ParseError("invalid hex digit '" + std::string(1, digits[i]) + "' at position " +
                           std::to_string(offset + i),
                       offset + i);
    }
  }
  if (digits.size() % 2 != 0) {
    throw ParseError("odd number of hex digits (" + std::to_string(digits.size()) +
                         "); dangling digit at position " + std::to_string(text.size() - 1),
                     text.size() - 1);
  }
  RawBytecode bytes(digits.size() / 2);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(hex_value(digits[2 * i]) * 16 + hex_value(digits[2 * i + 1]));
  }
  return bytes;
}

OpSequence disassemble(std::span<const std::uint8_t> raw, const OpcodeTable& table) {
  OpSequence ops;
  ops.reserve(raw.size());
  std::size_t pc = 0;
  while (pc < raw.size()) {
    const std::uint8_t byte = raw[pc];
    const auto& entry = table.entry(byte);
    if (!entry) {
      ops.push_back(Token::invalid());
      ++pc;
      continue;
    }
    ops.emplace_back(byte);
    pc += 1 + entry->operand_bytes;
  }
  return ops;
}

Token normalize_token(Token token) {
  if (token.is_invalid()) return token;
  for (const auto& family : kMergedFamilies) {
    if (token.byte() >= family.first && token.byte() <= family.last) return Token(family.first);
  }
  return token;
}

NormalizedSequence normalize(const OpSequence& ops) {
  NormalizedSequence out;
  out.tokens.reserve(ops.size());
  for (Token t : ops) out.tokens.push_back(normalize_token(t));
  return out;
}

std::string render_token(Token token) {
  if (token.is_invalid()) return "xx";
  return {kHexDigits[token.byte() >> 4], kHexDigits[token.byte() & 0xf]};
}

std::string render(const NormalizedSequence& seq) {
  std::string out;
  if (seq.tokens.empty()) return out;
  out.reserve(seq.tokens.size() * 3 - 1);
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += render_token(seq.tokens[i]);
  }
  return out;
}

NormalizedSequence parse_normalized(std::string_view text, const OpcodeTable& table) {
  NormalizedSequence seq;
  std::size_t index = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto next = text.find(' ', pos);
    const std::string_view item =
        text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
    if (item == "xx") {
      seq.tokens.push_back(Token::invalid());
    } else {
      const int hi = item.size() == 2 ? hex_value(item[0]) : -1;
      const int lo = item.size() == 2 ? hex_value(item[1]) : -1;
      if (hi < 0 || lo < 0 || std::isupper(static_cast<unsigned char>(item[0])) ||
          std::isupper(static_cast<unsigned char>(item[1]))) {
        throw ParseError("invalid token '" + std::string(item) + "' at index " +
                             std::to_string(index),
                         index);
      }
      const Token token(static_cast<std::uint8_t>(hi * 16 + lo));
      if (!table.contains(token.byte()) || normalize_token(token) != token) {
        throw ParseError("token '" + std::string(item) + "' at index " + std::to_string(index) +
                             " is not a normalized opcode",
                         index);
      }
      seq.tokens.push_back(token);
    }
    ++index;
    if (next == std::string_view::npos) break;
    pos = next + 1;
    if (pos == text.size()) {
      throw ParseError("trailing separator at index " + std::to_string(index), index);
    }
  }
  return seq;
}

NormalizedSequence preprocess(std::string_view hex, const OpcodeTable& table) {
  return normalize(disassemble(parse_hex(hex), table));
}

}  // namespace vulnscan::evm
