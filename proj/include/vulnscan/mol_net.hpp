// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vulnscan/tokenizer.hpp"

namespace vulnscan::mol {

/// Dense row-major array.
template <typename T>
struct BasicTensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<std::size_t> dims, T fill = T{0});

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool operator==(const BasicTensor&) const = default;
};

using Tensor = BasicTensor<float>;

struct StemConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 16;
  std::size_t gru_hidden = 64;
  double dropout_rate = 0.2;
  std::size_t max_sequence_length = tokenizer::kDefaultMaxSequenceLength;

  void validate() const;

  /// Vocabulary 128, embedding 11, GRU 64: a 16,000-parameter stem, so six
  /// default branches bring the model to 115,846 parameters.
  static StemConfig reference();

  bool operator==(const StemConfig&) const = default;
};

struct BranchConfig {
  std::string class_name;
  std::vector<std::size_t> dense_widths{128, 64, 1};

  bool operator==(const BranchConfig&) const = default;
};

template <typename T>
struct ParamBlock {
  std::string name;
  BasicTensor<T> value;
  bool frozen = false;
};

enum class Mode { kTrain, kEval };

/// Stem block layout. GRU gates use one input kernel (d x h), one recurrent
/// kernel (h x h) and one bias (h) each.
enum StemBlock : std::size_t {
  kEmbedding = 0,
  kUpdateInput,
  kUpdateRecurrent,
  kUpdateBias,
  kResetInput,
  kResetRecurrent,
  kResetBias,
  kCandidateInput,
  kCandidateRecurrent,
  kCandidateBias,
  kStemBlockCount,
};

/// Shared embedding + GRU stem feeding one dense branch per class. Branch
/// b's layers occupy blocks [branch_begin(b), branch_end(b)) as
/// (kernel, bias) pairs.
template <typename T>
class BasicMolModel {
 public:
  BasicMolModel() = default;

  const StemConfig& stem() const { return stem_; }
  const std::vector<BranchConfig>& branches() const { return branches_; }
  std::size_t branch_count() const { return branches_.size(); }
  std::vector<std::string> class_names() const;

  std::vector<ParamBlock<T>>& blocks() { return blocks_; }
  const std::vector<ParamBlock<T>>& blocks() const { return blocks_; }
  std::size_t branch_begin(std::size_t branch) const { return branch_offsets_.at(branch); }
  std::size_t branch_end(std::size_t branch) const { return branch_offsets_.at(branch + 1); }

  /// Appends a freshly initialized, unfrozen branch; existing blocks are
  /// untouched. Throws ConfigError on a duplicate class name.
  void add_branch(const BranchConfig& config, std::uint64_t seed);

  void set_stem_frozen(bool frozen);
  void set_branch_frozen(std::size_t branch, bool frozen);
  bool stem_frozen() const;
  bool branch_frozen(std::size_t branch) const;

  const std::string& vocab_fingerprint() const { return vocab_fingerprint_; }
  void set_vocab_fingerprint(std::string fp) { vocab_fingerprint_ = std::move(fp); }

  /// Same model with parameters converted to U.
  template <typename U>
  BasicMolModel<U> cast() const;

 private:
  template <typename U>
  friend class BasicMolModel;
  template <typename U>
  friend BasicMolModel<U> init_model_as(const StemConfig&, const std::vector<BranchConfig>&,
                                        std::uint64_t);
  friend BasicMolModel<float> load_model(const std::string&);

  void append_branch_blocks(const BranchConfig& config, std::uint64_t seed);

  StemConfig stem_;
  std::vector<BranchConfig> branches_;
  std::vector<ParamBlock<T>> blocks_;
  std::vector<std::size_t> branch_offsets_{kStemBlockCount};
  std::string vocab_fingerprint_;
};

using MolModel = BasicMolModel<float>;

/// Fan-in uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases,
/// nothing frozen.
template <typename T>
BasicMolModel<T> init_model_as(const StemConfig& stem, const std::vector<BranchConfig>& branches,
                               std::uint64_t seed);

inline MolModel init_model(const StemConfig& stem, const std::vector<BranchConfig>& branches,
                           std::uint64_t seed) {
  return init_model_as<float>(stem, branches, seed);
}

/// Intermediates recorded by forward() for backward().
template <typename T>
struct ForwardCache {
  bool valid = false;
  Mode mode = Mode::kEval;
  std::size_t batch = 0;
  std::size_t branch_count = 0;
  std::vector<std::vector<tokenizer::TokenId>> inputs;  // unpadded ids per sample
  // Per sample, per processed step: h_prev, z, r, n (each gru_hidden wide).
  std::vector<std::vector<T>> gru_steps;
  BasicTensor<T> final_hidden;    // batch x h
  BasicTensor<T> dropout_scale;   // batch x h; 0 or 1/(1-rate), empty in eval
  BasicTensor<T> stem_output;     // batch x h
  // [branch][layer]: pre-activation, batch x width.
  std::vector<std::vector<BasicTensor<T>>> pre_activations;
  BasicTensor<T> probabilities;   // batch x branches
};

/// Per-block gradients aligned with model.blocks(); frozen blocks hold
/// std::nullopt.
template <typename T>
using Gradients = std::vector<std::optional<BasicTensor<T>>>;

inline constexpr double kProbabilityClamp = 1e-7;

/// Probabilities (batch x branches), each in [1e-7, 1 - 1e-7]. GRU updates
/// stop at each sample's true_length. Train mode applies seeded inverted
/// dropout to the stem output. Throws DataError on ids >= vocab_size.
template <typename T>
BasicTensor<T> forward(const BasicMolModel<T>& model,
                       std::span<const tokenizer::TokenSequence> batch, Mode mode,
                       std::uint64_t seed, ForwardCache<T>* cache = nullptr);

/// Mean binary cross-entropy over all cells, probabilities clamped to
/// [1e-7, 1 - 1e-7]. Throws ConfigError on shape mismatch.
template <typename T>
double bce_loss(const BasicTensor<T>& labels, const BasicTensor<T>& probabilities);

/// Gradients of bce_loss(labels, forward(...)) for every unfrozen block,
/// using the intermediates in `cache`. The sigmoid+BCE head contributes
/// (p - y) / cells per logit. With `loss_branches`, only those branch
/// columns enter the loss (cells = batch x active branches). Throws
/// UsageError when the cache does not match this model and label shape.
template <typename T>
Gradients<T> backward(const BasicMolModel<T>& model, const ForwardCache<T>& cache,
                      const BasicTensor<T>& labels,
                      const std::vector<bool>* loss_branches = nullptr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::optional<Tensor>> first_moment;
  std::vector<std::optional<Tensor>> second_moment;
};

inline constexpr double kDefaultLearningRate = 0.001;

/// Bias-corrected Adam update of every unfrozen block that has a gradient.
/// Frozen blocks are never written.
void adam_step(MolModel& model, const Gradients<float>& grads, AdamState& state,
               double learning_rate = kDefaultLearningRate);

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::size_t stem = 0;
  std::vector<std::size_t> per_branch;
};

template <typename T>
ParamCounts param_count(const BasicMolModel<T>& model);

/// Parameters of one branch with the given input width.
std::size_t branch_param_count(const BranchConfig& config, std::size_t input_width);
std::size_t stem_param_count(const StemConfig& config);

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const MolModel& model, const std::string& path);
/// Throws LoadError on a bad magic, version mismatch, truncation or
/// checksum failure.
MolModel load_model(const std::string& path);

}  // namespace vulnscan::mol
