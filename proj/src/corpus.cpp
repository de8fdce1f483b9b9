// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "vulnscan/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "vulnscan/error.hpp"
#include "vulnscan/random.hpp"

namespace vulnscan::corpus {
namespace {

bool valid_field(const std::string& s) {
  return s.find_first_of(",\"\r\n") == std::string::npos;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string::npos ? std::string::npos
                                                                   : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

template <typename Int>
bool parse_int(const std::string& s, Int& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size() && !s.empty();
}

bool parse_double(const std::string& s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size() && !s.empty();
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  return out;
}

ParseError row_error(const std::string& path, std::size_t line, const std::string& msg) {
  return ParseError(path + ":" + std::to_string(line) + ": " + msg, {}, line);
}

}  // namespace

ClassCatalog::ClassCatalog(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty() || !valid_field(n)) throw ConfigError("invalid class name '" + n + "'");
    if (!seen.insert(n).second) throw ConfigError("duplicate class name '" + n + "'");
  }
}

ClassCatalog ClassCatalog::defaults() {
  return ClassCatalog({"Callstack Depth", "Reentrancy", "Multiple Sends",
                       "Accessible selfdestruct", "DoS Unbounded Operation",
                       "Tainted selfdestruct", "Money concurrency", "Assert violation"});
}

ClassCatalog ClassCatalog::prefix(std::size_t n) const {
  if (n > names_.size()) throw ConfigError("catalog has only " + std::to_string(names_.size()) + " classes");
  return ClassCatalog(std::vector<std::string>(names_.begin(), names_.begin() + n));
}

bool is_clean(const LabelVector& labels) {
  return std::all_of(labels.begin(), labels.end(), [](std::uint8_t b) { return b == 0; });
}

LabelVector arbitrate_labels(const std::vector<DetectorReport>& reports,
                             const std::vector<ToolProfile>& profiles,
                             const ClassCatalog& catalog) {
  std::map<std::string, const ToolProfile*> by_tool;
  for (const auto& p : profiles) by_tool[p.tool_name] = &p;

  for (const auto& r : reports) {
    const auto it = by_tool.find(r.tool_name);
    if (it == by_tool.end()) throw DataError("no profile for tool '" + r.tool_name + "'");
    for (const auto& [class_id, verdict] : r.verdicts) {
      if (!it->second->f1_by_class.contains(class_id)) {
        throw DataError("tool '" + r.tool_name + "' reports class " + std::to_string(class_id) +
                        " which its profile does not support");
      }
    }
  }

  LabelVector labels(catalog.size(), 0);
  for (std::size_t c = 1; c <= catalog.size(); ++c) {
    const DetectorReport* best = nullptr;
    double best_f1 = -1.0;
    for (const auto& r : reports) {
      const auto verdict = r.verdicts.find(c);
      if (verdict == r.verdicts.end()) continue;
      const double f1 = by_tool.at(r.tool_name)->f1_by_class.at(c);
      if (!best || f1 > best_f1 || (f1 == best_f1 && r.tool_name < best->tool_name)) {
        best = &r;
        best_f1 = f1;
      }
    }
    if (!best) {
      throw DataError("class " + std::to_string(c) + " (" + catalog.name(c) +
                      ") is covered by no reporting tool");
    }
    labels[c - 1] = best->verdicts.at(c) ? 1 : 0;
  }
  return labels;
}

std::vector<ContractRecord> build_balanced(const std::vector<ContractRecord>& records,
                                           std::size_t per_class_min, std::size_t clean_count,
                                           std::uint64_t seed) {
  if (records.empty() && (per_class_min > 0 || clean_count > 0)) {
    throw DataError("no records to balance");
  }
  const std::size_t classes = records.empty() ? 0 : records.front().labels.size();
  std::vector<std::vector<std::size_t>> positives(classes);
  std::vector<std::size_t> clean;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].labels.size() != classes) throw ConfigError("inconsistent label arity");
    if (is_clean(records[i].labels)) clean.push_back(i);
    for (std::size_t c = 0; c < classes; ++c) {
      if (records[i].labels[c]) positives[c].push_back(i);
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (positives[c].size() < per_class_min) {
      throw DataError("class " + std::to_string(c + 1) + ": have " +
                      std::to_string(positives[c].size()) + ", need " +
                      std::to_string(per_class_min));
    }
  }
  if (clean.size() < clean_count) {
    throw DataError("clean records: have " + std::to_string(clean.size()) + ", need " +
                    std::to_string(clean_count));
  }

  Rng rng(seed);
  std::vector<ContractRecord> out;
  std::unordered_set<std::string> seen;
  auto take = [&](std::vector<std::size_t>& pool, std::size_t n) {
    rng.shuffle(std::span(pool));
    for (std::size_t k = 0; k < n; ++k) {
      const auto& r = records[pool[k]];
      if (seen.insert(r.address).second) out.push_back(r);
    }
  };
  for (auto& pool : positives) take(pool, per_class_min);
  take(clean, clean_count);
  return out;
}

Split split(std::vector<ContractRecord> corpus, std::uint64_t seed) {
  if (corpus.size() < 10) {
    throw ConfigError("split needs at least 10 records, got " + std::to_string(corpus.size()));
  }
  Rng rng(seed);
  rng.shuffle(std::span(corpus));
  const std::size_t n = corpus.size();
  const std::size_t test = n / 5;
  const std::size_t rest = n - test;
  const std::size_t validation = rest / 10;
  const std::size_t train = rest - validation;

  Split out;
  auto move_range = [&](std::size_t from, std::size_t to) {
    return std::vector<ContractRecord>(std::make_move_iterator(corpus.begin() + from),
                                       std::make_move_iterator(corpus.begin() + to));
  };
  out.train = move_range(0, train);
  out.validation = move_range(train, rest);
  out.test = move_range(rest, n);
  return out;
}

std::vector<Chunk> chunk(std::vector<ContractRecord> corpus, std::size_t chunk_size,
                         std::uint64_t seed) {
  if (chunk_size == 0) throw ConfigError("chunk size must be at least 1");
  Rng rng(seed);
  rng.shuffle(std::span(corpus));
  std::vector<Chunk> chunks;
  for (std::size_t start = 0; start < corpus.size(); start += chunk_size) {
    const std::size_t end = std::min(corpus.size(), start + chunk_size);
    Chunk c;
    c.index = chunks.size();
    c.records.assign(std::make_move_iterator(corpus.begin() + start),
                     std::make_move_iterator(corpus.begin() + end));
    chunks.push_back(std::move(c));
  }
  return chunks;
}

void write_chunk(const Chunk& chunk, const ClassCatalog& catalog, const std::string& path) {
  auto out = open_out(path);
  out << "address,bytecode";
  for (const auto& n : catalog.names()) out << ',' << n;
  out << '\n';
  for (const auto& r : chunk.records) {
    if (!valid_field(r.address)) throw ConfigError("address not CSV-safe: '" + r.address + "'");
    if (r.labels.size() != catalog.size()) {
      throw ConfigError("record " + r.address + " has " + std::to_string(r.labels.size()) +
                        " labels, catalog has " + std::to_string(catalog.size()));
    }
    out << r.address << ',' << evm::render(r.normalized);
    for (auto b : r.labels) out << ',' << (b ? '1' : '0');
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

ChunkFile read_chunk(const std::string& path, std::size_t index) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw row_error(path, 1, "missing header");
  const auto header = split_csv(strip_cr(line));
  if (header.size() < 2 || header[0] != "address" || header[1] != "bytecode") {
    throw row_error(path, 1, "header must start with 'address,bytecode'");
  }
  ChunkFile file;
  try {
    file.catalog = ClassCatalog(std::vector<std::string>(header.begin() + 2, header.end()));
  } catch (const ConfigError& e) {
    throw row_error(path, 1, e.what());
  }
  file.chunk.index = index;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw row_error(path, line_no, "expected " + std::to_string(header.size()) +
                                         " columns, got " + std::to_string(fields.size()));
    }
    ContractRecord r;
    r.address = fields[0];
    try {
      r.normalized = evm::parse_normalized(fields[1]);
    } catch (const ParseError& e) {
      throw row_error(path, line_no, std::string("column 'bytecode': ") + e.what());
    }
    r.labels.reserve(header.size() - 2);
    for (std::size_t c = 2; c < fields.size(); ++c) {
      if (fields[c] != "0" && fields[c] != "1") {
        throw row_error(path, line_no, "column '" + header[c] + "': label must be 0 or 1, got '" +
                                           fields[c] + "'");
      }
      r.labels.push_back(fields[c] == "1" ? 1 : 0);
    }
    file.chunk.records.push_back(std::move(r));
  }
  return file;
}

std::vector<ToolProfile> read_profiles(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  if (strip_cr(line) != "tool,class_id,f1") throw row_error(path, 1, "header must be 'tool,class_id,f1'");
  std::vector<ToolProfile> profiles;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    std::size_t class_id = 0;
    double f1 = 0;
    if (f.size() != 3) throw row_error(path, line_no, "expected 3 columns");
    if (!parse_int(f[1], class_id) || class_id == 0) throw row_error(path, line_no, "bad class_id");
    if (!parse_double(f[2], f1) || !(f1 >= 0.0 && f1 <= 1.0)) {
      throw row_error(path, line_no, "f1 must be in [0,1]");
    }
    auto it = std::find_if(profiles.begin(), profiles.end(),
                           [&](const ToolProfile& p) { return p.tool_name == f[0]; });
    if (it == profiles.end()) {
      profiles.push_back({f[0], {}});
      it = profiles.end() - 1;
    }
    if (!it->f1_by_class.emplace(class_id, f1).second) {
      throw row_error(path, line_no, "duplicate class for tool '" + f[0] + "'");
    }
  }
  return profiles;
}

void write_profiles(const std::vector<ToolProfile>& profiles, const std::string& path) {
  auto out = open_out(path);
  out << "tool,class_id,f1\n";
  for (const auto& p : profiles) {
    for (const auto& [c, f1] : p.f1_by_class) out << p.tool_name << ',' << c << ',' << f1 << '\n';
  }
}

std::vector<std::pair<std::string, std::vector<DetectorReport>>> read_reports(
    const std::string& path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  if (strip_cr(line) != "tool,address,class_id,verdict") {
    throw row_error(path, 1, "header must be 'tool,address,class_id,verdict'");
  }
  std::vector<std::pair<std::string, std::vector<DetectorReport>>> grouped;
  std::map<std::string, std::size_t> slot;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    std::size_t class_id = 0;
    if (f.size() != 4) throw row_error(path, line_no, "expected 4 columns");
    if (!parse_int(f[2], class_id) || class_id == 0) throw row_error(path, line_no, "bad class_id");
    if (f[3] != "0" && f[3] != "1") throw row_error(path, line_no, "column 'verdict' must be 0 or 1");
    auto [it, inserted] = slot.emplace(f[1], grouped.size());
    if (inserted) grouped.push_back({f[1], {}});
    auto& reports = grouped[it->second].second;
    auto rep = std::find_if(reports.begin(), reports.end(),
                            [&](const DetectorReport& r) { return r.tool_name == f[0]; });
    if (rep == reports.end()) {
      reports.push_back({f[0], {}});
      rep = reports.end() - 1;
    }
    if (!rep->verdicts.emplace(class_id, f[3] == "1").second) {
      throw row_error(path, line_no, "duplicate verdict");
    }
  }
  return grouped;
}

SynthSpec SynthSpec::defaults(std::size_t class_count, std::size_t per_class,
                              std::size_t clean_count) {
  using evm::Token;
  static const std::vector<std::vector<std::uint8_t>> kMotifs = {
      {0x5a, 0xf1, 0x15},  // GAS CALL ISZERO
      {0x54, 0xf2, 0x55},  // SLOAD CALLCODE SSTORE
      {0x31, 0xf4, 0x3d},  // BALANCE DELEGATECALL RETURNDATASIZE
      {0x33, 0x32, 0xff},  // CALLER ORIGIN SELFDESTRUCT
      {0x5b, 0x11, 0x57},  // JUMPDEST GT JUMPI
      {0x35, 0x18, 0xf0},  // CALLDATALOAD XOR CREATE
      {0x42, 0x47, 0xfa},  // TIMESTAMP SELFBALANCE STATICCALL
      {0xfe, 0x0a, 0xfd},  // INVALID EXP REVERT
  };
  const auto catalog = ClassCatalog::defaults();
  if (class_count == 0 || class_count > kMotifs.size()) {
    throw ConfigError("default synthetic spec supports 1-" + std::to_string(kMotifs.size()) +
                      " classes");
  }
  SynthSpec spec;
  spec.catalog = catalog.prefix(class_count);
  std::set<std::uint8_t> reserved;
  for (std::size_t c = 0; c < kMotifs.size(); ++c) {
    reserved.insert(kMotifs[c].begin(), kMotifs[c].end());
    if (c < class_count) {
      evm::NormalizedSequence m;
      for (auto b : kMotifs[c]) m.tokens.emplace_back(b);
      spec.motifs.push_back(std::move(m));
    }
  }
  const auto& table = evm::default_opcode_table();
  for (unsigned b = 0; b < 256; ++b) {
    const Token t(static_cast<std::uint8_t>(b));
    if (table.contains(t.byte()) && evm::normalize_token(t) == t && !reserved.contains(t.byte())) {
      spec.filler.push_back(t);
    }
  }
  spec.positives_per_class.assign(class_count, per_class);
  spec.clean_count = clean_count;
  return spec;
}

bool contains_subsequence(const std::vector<evm::Token>& haystack,
                          const std::vector<evm::Token>& needle) {
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

std::vector<ContractRecord> synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  const std::size_t classes = spec.catalog.size();
  if (spec.motifs.size() != classes || spec.positives_per_class.size() != classes) {
    throw ConfigError("synthetic spec needs one motif and one count per class");
  }
  if (spec.filler.empty()) throw ConfigError("synthetic spec has no filler tokens");
  if (spec.min_length > spec.max_length) throw ConfigError("min_length exceeds max_length");
  if (spec.extra_label_rate < 0.0 || spec.extra_label_rate > 1.0) {
    throw ConfigError("extra_label_rate must be in [0,1]");
  }

  std::set<evm::Token> motif_tokens;
  std::size_t longest = 0;
  std::size_t total = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& m = spec.motifs[c].tokens;
    if (m.empty()) throw ConfigError("motif for class " + std::to_string(c + 1) + " is empty");
    for (auto t : m) {
      if (!motif_tokens.insert(t).second) {
        throw ConfigError("motif tokens overlap (" + evm::render_token(t) + ")");
      }
    }
    longest = std::max(longest, m.size());
    total += m.size();
  }
  for (auto t : spec.filler) {
    if (motif_tokens.contains(t)) {
      throw ConfigError("filler token " + evm::render_token(t) + " also appears in a motif");
    }
  }
  const std::size_t needed = spec.extra_label_rate > 0.0 ? total : longest;
  if (needed > spec.min_length) {
    throw ConfigError("motifs need " + std::to_string(needed) +
                      " tokens but min_length is " + std::to_string(spec.min_length));
  }

  Rng rng(seed);
  const std::uint64_t tag = mix_seed(seed, 0x5e7) & 0xffffffffffffULL;
  std::vector<ContractRecord> out;

  auto make = [&](LabelVector labels) {
    const std::size_t length = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
    std::vector<std::size_t> present;
    std::size_t motif_len = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (labels[c]) {
        present.push_back(c);
        motif_len += spec.motifs[c].tokens.size();
      }
    }
    rng.shuffle(std::span(present));
    const std::size_t filler_len = length - motif_len;
    std::vector<evm::Token> filler(filler_len);
    for (auto& t : filler) t = spec.filler[rng.below(spec.filler.size())];
    std::vector<std::size_t> cuts(present.size());
    for (auto& cut : cuts) cut = rng.below(filler_len + 1);
    std::sort(cuts.begin(), cuts.end());

    ContractRecord r;
    char addr[64];
    std::snprintf(addr, sizeof addr, "0x%012llx%028llx", static_cast<unsigned long long>(tag),
                  static_cast<unsigned long long>(out.size()));
    r.address = addr;
    r.labels = std::move(labels);
    auto& tokens = r.normalized.tokens;
    tokens.reserve(length);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < present.size(); ++k) {
      tokens.insert(tokens.end(), filler.begin() + pos, filler.begin() + cuts[k]);
      pos = cuts[k];
      const auto& m = spec.motifs[present[k]].tokens;
      tokens.insert(tokens.end(), m.begin(), m.end());
    }
    tokens.insert(tokens.end(), filler.begin() + pos, filler.end());
    out.push_back(std::move(r));
  };

  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < spec.positives_per_class[c]; ++i) {
      LabelVector labels(classes, 0);
      labels[c] = 1;
      for (std::size_t o = 0; o < classes; ++o) {
        if (o != c && rng.bernoulli(spec.extra_label_rate)) labels[o] = 1;
      }
      make(std::move(labels));
    }
  }
  for (std::size_t i = 0; i < spec.clean_count; ++i) make(LabelVector(classes, 0));
  return out;
}

}  // namespace vulnscan::corpus
