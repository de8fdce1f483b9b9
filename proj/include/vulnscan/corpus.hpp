// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vulnscan/evm_bytecode.hpp"

namespace vulnscan::corpus {

/// Ordered vulnerability classes. Class ids are 1-based positions.
class ClassCatalog {
 public:
  ClassCatalog() = default;
  /// Names must be unique, nonempty, and free of ',', '"' and newlines so
  /// they can serve as CSV column headers.
  explicit ClassCatalog(std::vector<std::string> names);

  /// The eight default classes cl.1-cl.8.
  static ClassCatalog defaults();

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t class_id) const { return names_.at(class_id - 1); }
  /// First `n` classes of this catalog.
  ClassCatalog prefix(std::size_t n) const;

  bool operator==(const ClassCatalog&) const = default;

 private:
  std::vector<std::string> names_;
};

/// Multi-hot label vector; all-zero marks a clean contract.
using LabelVector = std::vector<std::uint8_t>;

bool is_clean(const LabelVector& labels);

struct ContractRecord {
  std::string address;
  evm::NormalizedSequence normalized;
  LabelVector labels;

  bool operator==(const ContractRecord&) const = default;
};

struct ToolProfile {
  std::string tool_name;
  std::map<std::size_t, double> f1_by_class;  // class_id -> F1; absent = unsupported
};

struct DetectorReport {
  std::string tool_name;
  std::map<std::size_t, bool> verdicts;  // class_id -> flagged
};

/// Per class, adopts the verdict of the reporting tool with the highest F1
/// for that class. Equal F1s go to the lexicographically smallest tool name.
/// Throws DataError naming the class when no reporting tool covers it.
LabelVector arbitrate_labels(const std::vector<DetectorReport>& reports,
                             const std::vector<ToolProfile>& profiles,
                             const ClassCatalog& catalog);

/// Samples `per_class_min` positives per class and `clean_count` clean
/// records without replacement, then deduplicates by address. Throws
/// DataError on a shortage.
std::vector<ContractRecord> build_balanced(const std::vector<ContractRecord>& records,
                                           std::size_t per_class_min, std::size_t clean_count,
                                           std::uint64_t seed);

struct Split {
  std::vector<ContractRecord> train;
  std::vector<ContractRecord> validation;
  std::vector<ContractRecord> test;
};

/// Seeded shuffle; the last floor(20%) is test, and floor(10%) of the
/// remainder (its tail) is validation.
Split split(std::vector<ContractRecord> corpus, std::uint64_t seed);

struct Chunk {
  std::size_t index = 0;
  std::vector<ContractRecord> records;

  bool operator==(const Chunk&) const = default;
};

inline constexpr std::size_t kDefaultChunkSize = 1024;

std::vector<Chunk> chunk(std::vector<ContractRecord> corpus, std::size_t chunk_size,
                         std::uint64_t seed);

/// Chunk CSV: `address,bytecode,<class names...>`, bytecode in rendered
/// normalized form, labels literal 0/1.
void write_chunk(const Chunk& chunk, const ClassCatalog& catalog, const std::string& path);

struct ChunkFile {
  ClassCatalog catalog;  // from the header
  Chunk chunk;
};

/// Throws ParseError with the 1-based line number on malformed rows.
ChunkFile read_chunk(const std::string& path, std::size_t index = 0);

/// ToolProfile file: CSV `tool,class_id,f1`.
std::vector<ToolProfile> read_profiles(const std::string& path);
void write_profiles(const std::vector<ToolProfile>& profiles, const std::string& path);

/// DetectorReport file: CSV `tool,address,class_id,verdict`. Returns reports
/// grouped by address, in order of first appearance.
std::vector<std::pair<std::string, std::vector<DetectorReport>>> read_reports(
    const std::string& path);

struct SynthSpec {
  ClassCatalog catalog;
  std::vector<evm::NormalizedSequence> motifs;  // one per class
  std::vector<evm::Token> filler;
  std::size_t min_length = 32;
  std::size_t max_length = 128;
  std::vector<std::size_t> positives_per_class;
  std::size_t clean_count = 0;
  // Probability that a positive record also carries each other class.
  double extra_label_rate = 0.0;

  /// Motifs for the default catalog classes, with filler drawn from the
  /// remaining normalized opcodes. Motif and filler tokens are disjoint.
  static SynthSpec defaults(std::size_t class_count, std::size_t per_class,
                            std::size_t clean_count);
};

/// Random filler records with class-k's motif embedded contiguously iff
/// label k is set. Throws ConfigError for motifs that overlap each other or
/// the filler, or that cannot fit in min_length.
std::vector<ContractRecord> synth_generate(const SynthSpec& spec, std::uint64_t seed);

/// True when `needle` occurs contiguously in `haystack`.
bool contains_subsequence(const std::vector<evm::Token>& haystack,
                          const std::vector<evm::Token>& needle);

}  // namespace vulnscan::corpus
