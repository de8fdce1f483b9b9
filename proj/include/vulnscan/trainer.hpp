// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vulnscan/corpus.hpp"
#include "vulnscan/metrics.hpp"
#include "vulnscan/mol_net.hpp"
#include "vulnscan/tokenizer.hpp"

namespace vulnscan::trainer {

struct TrainConfig {
  std::size_t global_epochs = 1;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;
  double learning_rate = mol::kDefaultLearningRate;
  std::uint64_t seed = 0;
  double threshold = 0.5;

  void validate() const;
};

/// Encoded sequences with an N x K label matrix; `class_names` names the
/// label columns and selects the model branches they train or score.
struct EncodedSet {
  std::vector<std::string> class_names;
  std::vector<tokenizer::TokenSequence> sequences;
  mol::Tensor labels;

  std::size_t size() const { return sequences.size(); }
};

EncodedSet encode_records(const std::vector<corpus::ContractRecord>& records,
                          const std::vector<std::string>& class_names,
                          const tokenizer::Vocabulary& vocab, std::size_t max_sequence_length);

struct HistoryEntry {
  std::size_t global_epoch = 0;  // 1-based
  std::size_t local_epoch = 0;   // 1-based
  std::optional<std::size_t> chunk;  // absent on the end-of-global-epoch entry
  double train_loss = 0;
  std::optional<metrics::MetricsReport> validation;
  double wall_seconds = 0;
};

struct MetricsHistory {
  std::vector<HistoryEntry> entries;
  std::size_t optimizer_steps = 0;
  std::size_t trainable_parameters = 0;
  std::vector<double> step_losses;  // mean BCE of each optimizer step's batch
};

/// `global_epoch,local_epoch,chunk,train_loss,val_f1_weighted,val_hamming,wall_seconds`
void write_history(const MetricsHistory& history, const std::string& path);

struct FreezeMask {
  bool stem_frozen = false;
  std::vector<bool> branch_frozen;

  static FreezeMask of(const mol::MolModel& model);
  void apply(mol::MolModel& model) const;
};

/// Called after every optimizer step with the running step count.
using StepObserver = std::function<void(std::size_t step, double batch_loss)>;

/// For each global epoch, each chunk in order, each local epoch: seeded
/// shuffle of the chunk, mini-batches of batch_size (short last batch
/// kept), forward(train) -> BCE -> backward -> Adam. One history entry per
/// (global, chunk, local) and one closing entry per global epoch.
/// Chunk columns must name existing branches; branches without a column
/// must be frozen. Throws ConfigError otherwise.
MetricsHistory train(mol::MolModel& model, const std::vector<EncodedSet>& chunks,
                     const TrainConfig& config, const EncodedSet* validation = nullptr,
                     const StepObserver& observer = {});

/// Appends `new_branches`, freezes the stem and every pre-existing branch,
/// and trains only the new branches on `chunks` (whose columns are the new
/// class names).
MetricsHistory transfer_train(mol::MolModel& model, const std::vector<EncodedSet>& chunks,
                              const std::vector<mol::BranchConfig>& new_branches,
                              const TrainConfig& config, const EncodedSet* validation = nullptr,
                              const StepObserver& observer = {});

/// Eval-mode probabilities, one row per sequence, one column per branch.
mol::Tensor predict(const mol::MolModel& model,
                    const std::vector<tokenizer::TokenSequence>& sequences,
                    std::size_t batch_size = 256);

/// p >= threshold counts as positive.
std::vector<corpus::LabelVector> binarize(const mol::Tensor& probabilities, double threshold);

/// Scores the branches named by `set.class_names`. Throws DataError on an
/// empty set.
metrics::MetricsReport evaluate(const mol::MolModel& model, const EncodedSet& set,
                                double threshold = 0.5);

}  // namespace vulnscan::trainer
