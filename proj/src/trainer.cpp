// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "vulnscan/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "vulnscan/error.hpp"
#include "vulnscan/random.hpp"

namespace vulnscan::trainer {
namespace {

using Clock = std::chrono::steady_clock;

// Model branch index for each column of `names`.
std::vector<std::size_t> column_branches(const mol::MolModel& model,
                                         const std::vector<std::string>& names) {
  const auto model_names = model.class_names();
  std::vector<std::size_t> out;
  for (const auto& n : names) {
    const auto it = std::find(model_names.begin(), model_names.end(), n);
    if (it == model_names.end()) {
      throw ConfigError("label column '" + n + "' has no matching model branch");
    }
    out.push_back(static_cast<std::size_t>(it - model_names.begin()));
  }
  return out;
}

double masked_bce(const mol::Tensor& labels, const mol::Tensor& probs,
                  const std::vector<bool>& active) {
  double sum = 0.0;
  std::size_t cells = 0;
  for (std::size_t s = 0; s < probs.rows(); ++s) {
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      if (!active[k]) continue;
      const double y = labels.at(s, k);
      const double p = std::clamp(static_cast<double>(probs.at(s, k)), mol::kProbabilityClamp,
                                  1.0 - mol::kProbabilityClamp);
      sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
      ++cells;
    }
  }
  return sum / static_cast<double>(cells);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (global_epochs == 0 || local_epochs == 0 || batch_size == 0) {
    throw ConfigError("epoch counts and batch size must be at least 1");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0,1)");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

EncodedSet encode_records(const std::vector<corpus::ContractRecord>& records,
                          const std::vector<std::string>& class_names,
                          const tokenizer::Vocabulary& vocab, std::size_t max_sequence_length) {
  EncodedSet set;
  set.class_names = class_names;
  set.labels = mol::Tensor({records.size(), class_names.size()});
  set.sequences.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.labels.size() != class_names.size()) {
      throw ConfigError("record " + r.address + " has " + std::to_string(r.labels.size()) +
                        " labels, expected " + std::to_string(class_names.size()));
    }
    set.sequences.push_back(tokenizer::encode(r.normalized, vocab, max_sequence_length));
    for (std::size_t c = 0; c < class_names.size(); ++c) set.labels.at(i, c) = r.labels[c] ? 1.0f : 0.0f;
  }
  return set;
}

void write_history(const MetricsHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "global_epoch,local_epoch,chunk,train_loss,val_f1_weighted,val_hamming,wall_seconds\n";
  for (const auto& e : history.entries) {
    out << e.global_epoch << ',' << e.local_epoch << ','
        << (e.chunk ? std::to_string(*e.chunk) : std::string("all")) << ',' << fmt(e.train_loss)
        << ',';
    if (e.validation && e.validation->weighted_f1) out << fmt(*e.validation->weighted_f1);
    else out << "nan";
    out << ',' << (e.validation ? fmt(e.validation->hamming_loss) : std::string("nan")) << ','
        << fmt(e.wall_seconds) << '\n';
  }
}

FreezeMask FreezeMask::of(const mol::MolModel& model) {
  FreezeMask m;
  m.stem_frozen = model.stem_frozen();
  for (std::size_t b = 0; b < model.branch_count(); ++b) m.branch_frozen.push_back(model.branch_frozen(b));
  return m;
}

void FreezeMask::apply(mol::MolModel& model) const {
  if (branch_frozen.size() != model.branch_count()) throw ConfigError("freeze mask arity mismatch");
  model.set_stem_frozen(stem_frozen);
  for (std::size_t b = 0; b < branch_frozen.size(); ++b) model.set_branch_frozen(b, branch_frozen[b]);
}

MetricsHistory train(mol::MolModel& model, const std::vector<EncodedSet>& chunks,
                     const TrainConfig& config, const EncodedSet* validation,
                     const StepObserver& observer) {
  config.validate();
  if (chunks.empty()) throw ConfigError("no training chunks");
  const std::size_t K = model.branch_count();
  const auto columns = column_branches(model, chunks.front().class_names);
  for (const auto& c : chunks) {
    if (c.class_names != chunks.front().class_names) {
      throw ConfigError("all chunks must carry the same label columns");
    }
    if (c.labels.rows() != c.size() || c.labels.cols() != columns.size()) {
      throw ConfigError("chunk label matrix does not match its sequences");
    }
  }
  std::vector<bool> active(K, false);
  for (auto b : columns) active[b] = true;
  for (std::size_t b = 0; b < K; ++b) {
    if (!active[b] && !model.branch_frozen(b)) {
      throw ConfigError("branch '" + model.branches()[b].class_name +
                        "' has no label column and must be frozen");
    }
  }

  MetricsHistory history;
  history.trainable_parameters = mol::param_count(model).trainable;
  if (history.trainable_parameters == 0) throw ConfigError("every parameter block is frozen");

  mol::AdamState adam;
  const auto start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };
  auto validate_now = [&]() -> std::optional<metrics::MetricsReport> {
    if (!validation || validation->size() == 0) return std::nullopt;
    return evaluate(model, *validation, config.threshold);
  };

  std::vector<tokenizer::TokenSequence> batch;
  mol::ForwardCache<float> cache;
  for (std::size_t g = 1; g <= config.global_epochs; ++g) {
    double global_loss = 0.0;
    std::size_t global_samples = 0;
    for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
      const auto& chunk = chunks[ci];
      std::vector<std::size_t> order(chunk.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t l = 1; l <= config.local_epochs; ++l) {
        Rng rng(mix_seed(config.seed, (g * 1000003 + ci) * 1009 + l));
        rng.shuffle(std::span(order));
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
          const std::size_t end = std::min(order.size(), begin + config.batch_size);
          const std::size_t n = end - begin;
          batch.clear();
          mol::Tensor labels({n, K});
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t row = order[begin + i];
            batch.push_back(chunk.sequences[row]);
            for (std::size_t c = 0; c < columns.size(); ++c) {
              labels.at(i, columns[c]) = chunk.labels.at(row, c);
            }
          }
          const std::uint64_t step_seed = mix_seed(config.seed, 0x5eed0000ULL + history.optimizer_steps);
          const auto probs = mol::forward(model, std::span<const tokenizer::TokenSequence>(batch),
                                          mol::Mode::kTrain, step_seed, &cache);
          const double loss = masked_bce(labels, probs, active);
          const auto grads = mol::backward(model, cache, labels, &active);
          mol::adam_step(model, grads, adam, config.learning_rate);
          ++history.optimizer_steps;
          history.step_losses.push_back(loss);
          epoch_loss += loss * static_cast<double>(n);
          if (observer) observer(history.optimizer_steps, loss);
        }
        const double mean = chunk.size() ? epoch_loss / static_cast<double>(chunk.size()) : 0.0;
        global_loss += epoch_loss;
        global_samples += chunk.size();
        history.entries.push_back({g, l, ci, mean, validate_now(), elapsed()});
      }
    }
    history.entries.push_back(
        {g, config.local_epochs, std::nullopt,
         global_samples ? global_loss / static_cast<double>(global_samples) : 0.0,
         history.entries.empty() ? std::nullopt : history.entries.back().validation, elapsed()});
  }
  return history;
}

MetricsHistory transfer_train(mol::MolModel& model, const std::vector<EncodedSet>& chunks,
                              const std::vector<mol::BranchConfig>& new_branches,
                              const TrainConfig& config, const EncodedSet* validation,
                              const StepObserver& observer) {
  config.validate();
  if (new_branches.empty()) throw ConfigError("transfer learning needs at least one new branch");
  std::vector<std::string> new_names;
  for (const auto& b : new_branches) new_names.push_back(b.class_name);
  for (const auto& c : chunks) {
    if (c.class_names != new_names) {
      throw ConfigError("transfer chunks must carry exactly the new class columns");
    }
  }
  const std::size_t old_count = model.branch_count();
  mol::MolModel staged = model;
  for (std::size_t i = 0; i < new_branches.size(); ++i) {
    staged.add_branch(new_branches[i], mix_seed(config.seed, 0x7a000 + old_count + i));
  }
  FreezeMask mask;
  mask.stem_frozen = true;
  mask.branch_frozen.assign(staged.branch_count(), false);
  std::fill(mask.branch_frozen.begin(), mask.branch_frozen.begin() + old_count, true);
  mask.apply(staged);

  auto history = train(staged, chunks, config, validation, observer);
  model = std::move(staged);
  return history;
}

mol::Tensor predict(const mol::MolModel& model,
                    const std::vector<tokenizer::TokenSequence>& sequences,
                    std::size_t batch_size) {
  const std::size_t K = model.branch_count();
  mol::Tensor out({sequences.size(), K});
  for (std::size_t begin = 0; begin < sequences.size(); begin += batch_size) {
    const std::size_t end = std::min(sequences.size(), begin + batch_size);
    const auto probs = mol::forward(
        model, std::span<const tokenizer::TokenSequence>(sequences).subspan(begin, end - begin),
        mol::Mode::kEval, 0);
    std::copy(probs.data.begin(), probs.data.end(), out.data.begin() + begin * K);
  }
  return out;
}

std::vector<corpus::LabelVector> binarize(const mol::Tensor& probabilities, double threshold) {
  std::vector<corpus::LabelVector> out(probabilities.rows(),
                                       corpus::LabelVector(probabilities.cols(), 0));
  for (std::size_t s = 0; s < probabilities.rows(); ++s) {
    for (std::size_t k = 0; k < probabilities.cols(); ++k) {
      out[s][k] = probabilities.at(s, k) >= threshold ? 1 : 0;
    }
  }
  return out;
}

metrics::MetricsReport evaluate(const mol::MolModel& model, const EncodedSet& set,
                                double threshold) {
  if (set.size() == 0) throw DataError("cannot evaluate on an empty split");
  const auto columns = column_branches(model, set.class_names);
  const auto all = predict(model, set.sequences);
  mol::Tensor probs({set.size(), columns.size()});
  for (std::size_t s = 0; s < set.size(); ++s) {
    for (std::size_t c = 0; c < columns.size(); ++c) probs.at(s, c) = all.at(s, columns[c]);
  }
  const auto y_pred = binarize(probs, threshold);
  const auto y_true = binarize(set.labels, 0.5);
  const double loss = mol::bce_loss(set.labels, probs);
  return metrics::make_report(metrics::confusion(y_true, y_pred), set.class_names, loss);
}

}  // namespace vulnscan::trainer
