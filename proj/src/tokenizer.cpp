// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "vulnscan/tokenizer.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vulnscan/error.hpp"

namespace vulnscan::tokenizer {
namespace {

constexpr const char* kPadText = "<PAD>";
constexpr const char* kOovText = "<OOV>";

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Vocabulary::Vocabulary() {
  by_code_.fill(kOovId);
  id_to_token_ = {kPadText, kOovText};
  token_to_id_ = {{kPadText, kPadId}, {kOovText, kOovId}};
}

void Vocabulary::add(const std::string& text) {
  const auto id = static_cast<TokenId>(id_to_token_.size());
  if (!token_to_id_.emplace(text, id).second) return;
  id_to_token_.push_back(text);
  if (text == "xx") {
    by_code_[evm::Token::kInvalidCode] = id;
  } else if (text.size() == 2) {
    unsigned byte = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + 2, byte, 16);
    if (ec == std::errc{} && p == text.data() + 2) by_code_[byte] = id;
  }
}

Vocabulary Vocabulary::fit(const std::vector<corpus::ContractRecord>& records) {
  Vocabulary v;
  for (const auto& r : records) {
    for (auto t : r.normalized.tokens) {
      if (v.by_code_[t.code()] == kOovId) v.add(evm::render_token(t));
    }
  }
  return v;
}

Vocabulary Vocabulary::fit(const std::vector<evm::NormalizedSequence>& sequences) {
  Vocabulary v;
  for (const auto& s : sequences) {
    for (auto t : s.tokens) {
      if (v.by_code_[t.code()] == kOovId) v.add(evm::render_token(t));
    }
  }
  return v;
}

TokenId Vocabulary::id_of(const std::string& text) const {
  const auto it = token_to_id_.find(text);
  if (it == token_to_id_.end() || it->second == kPadId) return kOovId;
  return it->second;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t id = 0; id < id_to_token_.size(); ++id) {
    out += id_to_token_[id];
    out += '\t';
    out += std::to_string(id);
    out += '\n';
  }
  return out;
}

std::string Vocabulary::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(serialize())));
  return buf;
}

Vocabulary Vocabulary::parse(const std::string& text) {
  std::vector<std::pair<std::string, std::size_t>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    std::size_t id = 0;
    const std::string id_text = tab == std::string::npos ? "" : line.substr(tab + 1);
    auto [p, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
    if (tab == std::string::npos || tab == 0 || ec != std::errc{} ||
        p != id_text.data() + id_text.size() || id_text.empty()) {
      throw ParseError("vocabulary line " + std::to_string(line_no) + ": expected <token>\\t<id>",
                       {}, line_no);
    }
    rows.emplace_back(line.substr(0, tab), id);
  }

  std::vector<std::string> by_id(rows.size());
  std::vector<bool> filled(rows.size(), false);
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [token, id] = rows[i];
    if (!seen.emplace(token, id).second) {
      throw ParseError("vocabulary: duplicate token '" + token + "'", {}, i + 1);
    }
    if (id >= rows.size() || filled[id]) {
      throw ParseError("vocabulary: ids must be unique and contiguous from 0 (bad id " +
                           std::to_string(id) + ")",
                       {}, i + 1);
    }
    by_id[id] = token;
    filled[id] = true;
  }
  if (by_id.size() < 2 || by_id[kPadId] != kPadText || by_id[kOovId] != kOovText) {
    throw ParseError("vocabulary: reserved entries <PAD>=0 and <OOV>=1 are required");
  }
  Vocabulary v;
  for (std::size_t id = 2; id < by_id.size(); ++id) {
    if (by_id[id] == kPadText || by_id[id] == kOovText) {
      throw ParseError("vocabulary: reserved token at id " + std::to_string(id));
    }
    v.add(by_id[id]);
  }
  return v;
}

TokenSequence encode(const evm::NormalizedSequence& seq, const Vocabulary& vocab,
                     std::size_t max_sequence_length) {
  if (max_sequence_length == 0) throw ConfigError("max_sequence_length must be at least 1");
  TokenSequence out;
  out.ids.assign(max_sequence_length, kPadId);
  out.true_length = std::min(seq.tokens.size(), max_sequence_length);
  for (std::size_t i = 0; i < out.true_length; ++i) out.ids[i] = vocab.id_of(seq.tokens[i]);
  return out;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(seq.true_length);
  for (std::size_t i = 0; i < seq.true_length; ++i) out.push_back(vocab.token_text(seq.ids[i]));
  return out;
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << vocab.serialize();
  if (!out) throw Error("write failed: " + path);
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open vocabulary " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return Vocabulary::parse(buf.str());
}

}  // namespace vulnscan::tokenizer
