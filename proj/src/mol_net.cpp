// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "vulnscan/mol_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>

#include <json.hpp>

#include "vulnscan/error.hpp"
#include "vulnscan/random.hpp"

namespace vulnscan::mol {
namespace {

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
T sigmoid(T a) {
  if (a >= T{0}) return T{1} / (T{1} + std::exp(-a));
  const T e = std::exp(a);
  return e / (T{1} + e);
}

template <typename T>
ParamBlock<T> uniform_block(std::string name, std::vector<std::size_t> dims, std::size_t fan_in,
                            Rng& rng) {
  ParamBlock<T> block{std::move(name), BasicTensor<T>(std::move(dims)), false};
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& w : block.value.data) w = static_cast<T>(rng.uniform(-limit, limit));
  return block;
}

template <typename T>
ParamBlock<T> zero_block(std::string name, std::vector<std::size_t> dims) {
  return {std::move(name), BasicTensor<T>(std::move(dims)), false};
}

void validate_branch(const BranchConfig& config) {
  if (config.class_name.empty()) throw ConfigError("branch class name is empty");
  if (config.dense_widths.empty() || config.dense_widths.back() != 1) {
    throw ConfigError("branch '" + config.class_name + "' must end in a single-neuron layer");
  }
  for (auto w : config.dense_widths) {
    if (w == 0) throw ConfigError("branch '" + config.class_name + "' has a zero-width layer");
  }
}

// out[j] += sum_i x[i] * w[i, j] for a (n x m) row-major w.
template <typename T>
inline void accumulate_xw(const T* x, std::size_t n, const T* w, std::size_t m, T* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const T xi = x[i];
    if (xi == T{0}) continue;
    const T* row = w + i * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += xi * row[j];
  }
}

// out[i] += sum_j w[i, j] * g[j].
template <typename T>
inline void accumulate_wg(const T* w, std::size_t n, std::size_t m, const T* g, T* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = w + i * m;
    T s{0};
    for (std::size_t j = 0; j < m; ++j) s += row[j] * g[j];
    out[i] += s;
  }
}

// grad[i, j] += x[i] * g[j].
template <typename T>
inline void accumulate_outer(const T* x, std::size_t n, const T* g, std::size_t m, T* grad) {
  for (std::size_t i = 0; i < n; ++i) {
    const T xi = x[i];
    if (xi == T{0}) continue;
    T* row = grad + i * m;
    for (std::size_t j = 0; j < m; ++j) row[j] += xi * g[j];
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(std::vector<std::size_t> dims, T fill)
    : shape(std::move(dims)), data(product(shape), fill) {}

void StemConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must cover the reserved ids (>= 2)");
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be at least 1");
  if (gru_hidden == 0) throw ConfigError("gru_hidden must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0,1)");
  if (max_sequence_length == 0) throw ConfigError("max_sequence_length must be at least 1");
}

StemConfig StemConfig::reference() {
  StemConfig c;
  c.vocab_size = 128;
  c.embedding_dim = 11;
  c.gru_hidden = 64;
  c.dropout_rate = 0.2;
  c.max_sequence_length = tokenizer::kDefaultMaxSequenceLength;
  return c;
}

std::size_t branch_param_count(const BranchConfig& config, std::size_t input_width) {
  std::size_t n = 0;
  std::size_t in = input_width;
  for (auto w : config.dense_widths) {
    n += in * w + w;
    in = w;
  }
  return n;
}

std::size_t stem_param_count(const StemConfig& c) {
  return c.vocab_size * c.embedding_dim +
         3 * (c.embedding_dim * c.gru_hidden + c.gru_hidden * c.gru_hidden + c.gru_hidden);
}

template <typename T>
std::vector<std::string> BasicMolModel<T>::class_names() const {
  std::vector<std::string> names;
  for (const auto& b : branches_) names.push_back(b.class_name);
  return names;
}

template <typename T>
void BasicMolModel<T>::append_branch_blocks(const BranchConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  const std::string prefix = "branch" + std::to_string(branches_.size());
  std::size_t in = stem_.gru_hidden;
  for (std::size_t l = 0; l < config.dense_widths.size(); ++l) {
    const std::size_t out = config.dense_widths[l];
    const std::string layer = prefix + ".dense" + std::to_string(l);
    blocks_.push_back(uniform_block<T>(layer + ".kernel", {in, out}, in, rng));
    blocks_.push_back(zero_block<T>(layer + ".bias", {out}));
    in = out;
  }
  branches_.push_back(config);
  branch_offsets_.push_back(blocks_.size());
}

template <typename T>
void BasicMolModel<T>::add_branch(const BranchConfig& config, std::uint64_t seed) {
  validate_branch(config);
  for (const auto& b : branches_) {
    if (b.class_name == config.class_name) {
      throw ConfigError("a branch for class '" + config.class_name + "' already exists");
    }
  }
  append_branch_blocks(config, seed);
}

template <typename T>
void BasicMolModel<T>::set_stem_frozen(bool frozen) {
  for (std::size_t i = 0; i < kStemBlockCount; ++i) blocks_[i].frozen = frozen;
}

template <typename T>
void BasicMolModel<T>::set_branch_frozen(std::size_t branch, bool frozen) {
  for (std::size_t i = branch_begin(branch); i < branch_end(branch); ++i) blocks_[i].frozen = frozen;
}

template <typename T>
bool BasicMolModel<T>::stem_frozen() const {
  for (std::size_t i = 0; i < kStemBlockCount; ++i) {
    if (!blocks_[i].frozen) return false;
  }
  return true;
}

template <typename T>
bool BasicMolModel<T>::branch_frozen(std::size_t branch) const {
  for (std::size_t i = branch_begin(branch); i < branch_end(branch); ++i) {
    if (!blocks_[i].frozen) return false;
  }
  return true;
}

template <typename T>
template <typename U>
BasicMolModel<U> BasicMolModel<T>::cast() const {
  BasicMolModel<U> out;
  out.stem_ = stem_;
  out.branches_ = branches_;
  out.branch_offsets_ = branch_offsets_;
  out.vocab_fingerprint_ = vocab_fingerprint_;
  for (const auto& b : blocks_) {
    ParamBlock<U> c{b.name, BasicTensor<U>(b.value.shape), b.frozen};
    std::transform(b.value.data.begin(), b.value.data.end(), c.value.data.begin(),
                   [](T v) { return static_cast<U>(v); });
    out.blocks_.push_back(std::move(c));
  }
  return out;
}

template <typename T>
BasicMolModel<T> init_model_as(const StemConfig& stem, const std::vector<BranchConfig>& branches,
                               std::uint64_t seed) {
  stem.validate();
  if (branches.empty()) throw ConfigError("a model needs at least one branch");
  BasicMolModel<T> model;
  model.stem_ = stem;
  Rng rng(seed);
  const std::size_t d = stem.embedding_dim;
  const std::size_t h = stem.gru_hidden;
  auto& blocks = model.blocks_;
  blocks.push_back(uniform_block<T>("embedding", {stem.vocab_size, d}, d, rng));
  for (const char* gate : {"update", "reset", "candidate"}) {
    const std::string g = std::string("gru.") + gate;
    blocks.push_back(uniform_block<T>(g + ".input_kernel", {d, h}, d, rng));
    blocks.push_back(uniform_block<T>(g + ".recurrent_kernel", {h, h}, h, rng));
    blocks.push_back(zero_block<T>(g + ".bias", {h}));
  }
  for (std::size_t b = 0; b < branches.size(); ++b) {
    model.add_branch(branches[b], mix_seed(seed, b + 1));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
BasicTensor<T> forward(const BasicMolModel<T>& model,
                       std::span<const tokenizer::TokenSequence> batch, Mode mode,
                       std::uint64_t seed, ForwardCache<T>* cache) {
  const auto& cfg = model.stem();
  const auto& blocks = model.blocks();
  const std::size_t B = batch.size();
  const std::size_t K = model.branch_count();
  const std::size_t d = cfg.embedding_dim;
  const std::size_t h = cfg.gru_hidden;

  for (std::size_t s = 0; s < B; ++s) {
    const auto& seq = batch[s];
    if (seq.true_length > seq.ids.size()) throw DataError("true_length exceeds sequence length");
    for (std::size_t t = 0; t < seq.true_length; ++t) {
      if (seq.ids[t] >= cfg.vocab_size) {
        throw DataError("token id " + std::to_string(seq.ids[t]) + " out of range for vocabulary of " +
                        std::to_string(cfg.vocab_size));
      }
    }
  }

  if (cache) {
    *cache = ForwardCache<T>{};
    cache->mode = mode;
    cache->batch = B;
    cache->branch_count = K;
    cache->inputs.resize(B);
    cache->gru_steps.resize(B);
  }

  const T* E = blocks[kEmbedding].value.data.data();
  const T* Wz = blocks[kUpdateInput].value.data.data();
  const T* Uz = blocks[kUpdateRecurrent].value.data.data();
  const T* bz = blocks[kUpdateBias].value.data.data();
  const T* Wr = blocks[kResetInput].value.data.data();
  const T* Ur = blocks[kResetRecurrent].value.data.data();
  const T* br = blocks[kResetBias].value.data.data();
  const T* Wn = blocks[kCandidateInput].value.data.data();
  const T* Un = blocks[kCandidateRecurrent].value.data.data();
  const T* bn = blocks[kCandidateBias].value.data.data();

  BasicTensor<T> hidden({B, h});
  std::vector<T> az(h), ar(h), an(h), q(h);
  for (std::size_t s = 0; s < B; ++s) {
    const auto& seq = batch[s];
    const std::size_t len = seq.true_length;
    T* hs = &hidden.at(s, 0);
    std::vector<T>* steps = nullptr;
    if (cache) {
      cache->inputs[s].assign(seq.ids.begin(), seq.ids.begin() + len);
      steps = &cache->gru_steps[s];
      steps->resize(len * 4 * h);
    }
    for (std::size_t t = 0; t < len; ++t) {
      const T* x = E + static_cast<std::size_t>(seq.ids[t]) * d;
      std::copy(bz, bz + h, az.begin());
      std::copy(br, br + h, ar.begin());
      std::copy(bn, bn + h, an.begin());
      accumulate_xw(x, d, Wz, h, az.data());
      accumulate_xw(x, d, Wr, h, ar.data());
      accumulate_xw(x, d, Wn, h, an.data());
      accumulate_xw(hs, h, Uz, h, az.data());
      accumulate_xw(hs, h, Ur, h, ar.data());
      for (std::size_t j = 0; j < h; ++j) {
        az[j] = sigmoid(az[j]);
        ar[j] = sigmoid(ar[j]);
        q[j] = ar[j] * hs[j];
      }
      accumulate_xw(q.data(), h, Un, h, an.data());
      if (steps) {
        T* rec = steps->data() + t * 4 * h;
        std::copy(hs, hs + h, rec);
        std::copy(az.begin(), az.end(), rec + h);
        std::copy(ar.begin(), ar.end(), rec + 2 * h);
      }
      for (std::size_t j = 0; j < h; ++j) {
        const T n = std::tanh(an[j]);
        an[j] = n;
        hs[j] = (T{1} - az[j]) * n + az[j] * hs[j];
      }
      if (steps) {
        T* rec = steps->data() + t * 4 * h;
        std::copy(an.begin(), an.end(), rec + 3 * h);
      }
    }
  }

  BasicTensor<T> stem_out = hidden;
  BasicTensor<T> scale;
  if (mode == Mode::kTrain && cfg.dropout_rate > 0.0) {
    scale = BasicTensor<T>({B, h});
    Rng rng(mix_seed(seed, 0xd809));
    const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg.dropout_rate));
    for (std::size_t i = 0; i < scale.size(); ++i) {
      scale.data[i] = rng.bernoulli(cfg.dropout_rate) ? T{0} : keep_scale;
      stem_out.data[i] *= scale.data[i];
    }
  }

  BasicTensor<T> probs({B, K});
  if (cache) cache->pre_activations.resize(K);
  const T lo = static_cast<T>(kProbabilityClamp);
  const T hi = static_cast<T>(1.0 - kProbabilityClamp);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& widths = model.branches()[k].dense_widths;
    std::size_t block = model.branch_begin(k);
    BasicTensor<T> input = stem_out;
    std::size_t in = h;
    for (std::size_t l = 0; l < widths.size(); ++l) {
      const std::size_t out = widths[l];
      const T* W = blocks[block].value.data.data();
      const T* bias = blocks[block + 1].value.data.data();
      BasicTensor<T> pre({B, out});
      for (std::size_t s = 0; s < B; ++s) {
        T* row = &pre.at(s, 0);
        std::copy(bias, bias + out, row);
        accumulate_xw(&input.at(s, 0), in, W, out, row);
      }
      BasicTensor<T> act = pre;
      if (l + 1 < widths.size()) {
        for (auto& v : act.data) v = std::max(v, T{0});
      }
      if (cache) cache->pre_activations[k].push_back(std::move(pre));
      input = std::move(act);
      in = out;
      block += 2;
    }
    for (std::size_t s = 0; s < B; ++s) probs.at(s, k) = std::clamp(sigmoid(input.at(s, 0)), lo, hi);
  }

  if (cache) {
    cache->final_hidden = std::move(hidden);
    cache->dropout_scale = std::move(scale);
    cache->stem_output = std::move(stem_out);
    cache->probabilities = probs;
    cache->valid = true;
  }
  return probs;
}

template <typename T>
double bce_loss(const BasicTensor<T>& labels, const BasicTensor<T>& probabilities) {
  if (labels.shape != probabilities.shape) throw ConfigError("bce_loss: shape mismatch");
  if (labels.size() == 0) throw ConfigError("bce_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = static_cast<double>(labels.data[i]);
    const double p = std::clamp(static_cast<double>(probabilities.data[i]), kProbabilityClamp,
                                1.0 - kProbabilityClamp);
    sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(labels.size());
}

template <typename T>
Gradients<T> backward(const BasicMolModel<T>& model, const ForwardCache<T>& cache,
                      const BasicTensor<T>& labels, const std::vector<bool>* loss_branches) {
  if (!cache.valid) throw UsageError("backward called without a recorded forward pass");
  const std::size_t B = cache.batch;
  const std::size_t K = model.branch_count();
  if (cache.branch_count != K || cache.pre_activations.size() != K) {
    throw UsageError("forward cache was recorded for a model with " +
                     std::to_string(cache.branch_count) + " branches, model has " +
                     std::to_string(K));
  }
  if (labels.shape != std::vector<std::size_t>{B, K}) {
    throw UsageError("labels do not match the recorded forward batch");
  }
  const auto& cfg = model.stem();
  const auto& blocks = model.blocks();
  const std::size_t d = cfg.embedding_dim;
  const std::size_t h = cfg.gru_hidden;
  if (cache.final_hidden.shape != std::vector<std::size_t>{B, h}) {
    throw UsageError("forward cache does not match the model stem");
  }

  Gradients<T> grads(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].frozen) grads[i] = BasicTensor<T>(blocks[i].value.shape);
  }
  const bool stem_needed = !model.stem_frozen();

  // Gradient w.r.t. the (dropped-out) stem output, summed over branches.
  BasicTensor<T> d_stem({B, h});
  if (loss_branches && loss_branches->size() != K) {
    throw UsageError("loss branch mask has the wrong length");
  }
  auto active = [&](std::size_t k) { return !loss_branches || (*loss_branches)[k]; };
  std::size_t active_count = 0;
  for (std::size_t k = 0; k < K; ++k) active_count += active(k);
  if (active_count == 0) throw UsageError("no branch contributes to the loss");
  const T inv_cells = T{1} / static_cast<T>(B * active_count);

  for (std::size_t k = 0; k < K; ++k) {
    if (!active(k)) continue;
    const auto& widths = model.branches()[k].dense_widths;
    const std::size_t first = model.branch_begin(k);
    const bool branch_needed = !model.branch_frozen(k);
    if (!branch_needed && !stem_needed) continue;

    const std::size_t L = widths.size();
    // Upstream gradient w.r.t. the last layer's pre-activation (the logit).
    BasicTensor<T> delta({B, 1});
    for (std::size_t s = 0; s < B; ++s) {
      delta.at(s, 0) = (cache.probabilities.at(s, k) - labels.at(s, k)) * inv_cells;
    }
    for (std::size_t l = L; l-- > 0;) {
      const std::size_t out = widths[l];
      const std::size_t in = l == 0 ? h : widths[l - 1];
      const std::size_t kb = first + 2 * l;
      // Input activation of layer l.
      auto input_at = [&](std::size_t s) -> std::vector<T> {
        std::vector<T> x(in);
        if (l == 0) {
          std::copy_n(&cache.stem_output.at(s, 0), in, x.begin());
        } else {
          const auto& prev = cache.pre_activations[k][l - 1];
          for (std::size_t i = 0; i < in; ++i) x[i] = std::max(prev.at(s, i), T{0});
        }
        return x;
      };
      if (grads[kb]) {
        T* gW = grads[kb]->data.data();
        T* gb = grads[kb + 1]->data.data();
        for (std::size_t s = 0; s < B; ++s) {
          const auto x = input_at(s);
          accumulate_outer(x.data(), in, &delta.at(s, 0), out, gW);
          for (std::size_t j = 0; j < out; ++j) gb[j] += delta.at(s, j);
        }
      }
      if (l == 0 && !stem_needed) break;
      BasicTensor<T> d_in({B, in});
      const T* W = blocks[kb].value.data.data();
      for (std::size_t s = 0; s < B; ++s) {
        accumulate_wg(W, in, out, &delta.at(s, 0), &d_in.at(s, 0));
      }
      if (l == 0) {
        for (std::size_t i = 0; i < d_stem.size(); ++i) d_stem.data[i] += d_in.data[i];
      } else {
        const auto& prev = cache.pre_activations[k][l - 1];
        for (std::size_t i = 0; i < d_in.size(); ++i) {
          if (!(prev.data[i] > T{0})) d_in.data[i] = T{0};
        }
        delta = std::move(d_in);
      }
    }
  }

  if (!stem_needed) return grads;

  // Through dropout.
  if (!cache.dropout_scale.data.empty()) {
    for (std::size_t i = 0; i < d_stem.size(); ++i) d_stem.data[i] *= cache.dropout_scale.data[i];
  }

  const T* Wz = blocks[kUpdateInput].value.data.data();
  const T* Uz = blocks[kUpdateRecurrent].value.data.data();
  const T* Wr = blocks[kResetInput].value.data.data();
  const T* Ur = blocks[kResetRecurrent].value.data.data();
  const T* Wn = blocks[kCandidateInput].value.data.data();
  const T* Un = blocks[kCandidateRecurrent].value.data.data();
  const T* E = blocks[kEmbedding].value.data.data();

  auto grad_ptr = [&](std::size_t i) -> T* { return grads[i] ? grads[i]->data.data() : nullptr; };
  T* gE = grad_ptr(kEmbedding);
  T* gWz = grad_ptr(kUpdateInput);
  T* gUz = grad_ptr(kUpdateRecurrent);
  T* gbz = grad_ptr(kUpdateBias);
  T* gWr = grad_ptr(kResetInput);
  T* gUr = grad_ptr(kResetRecurrent);
  T* gbr = grad_ptr(kResetBias);
  T* gWn = grad_ptr(kCandidateInput);
  T* gUn = grad_ptr(kCandidateRecurrent);
  T* gbn = grad_ptr(kCandidateBias);

  std::vector<T> dh(h), dhp(h), dz(h), dan(h), dq(h), dar(h), daz(h), dx(d), q(h);
  for (std::size_t s = 0; s < B; ++s) {
    const auto& ids = cache.inputs[s];
    const auto& steps = cache.gru_steps[s];
    std::copy_n(&d_stem.at(s, 0), h, dh.begin());
    for (std::size_t t = ids.size(); t-- > 0;) {
      const T* rec = steps.data() + t * 4 * h;
      const T* hprev = rec;
      const T* z = rec + h;
      const T* r = rec + 2 * h;
      const T* n = rec + 3 * h;
      const T* x = E + static_cast<std::size_t>(ids[t]) * d;

      for (std::size_t j = 0; j < h; ++j) {
        const T dn = dh[j] * (T{1} - z[j]);
        dz[j] = dh[j] * (hprev[j] - n[j]);
        dhp[j] = dh[j] * z[j];
        dan[j] = dn * (T{1} - n[j] * n[j]);
        q[j] = r[j] * hprev[j];
      }
      std::fill(dx.begin(), dx.end(), T{0});
      std::fill(dq.begin(), dq.end(), T{0});
      if (gWn) accumulate_outer(x, d, dan.data(), h, gWn);
      if (gUn) accumulate_outer(q.data(), h, dan.data(), h, gUn);
      if (gbn) for (std::size_t j = 0; j < h; ++j) gbn[j] += dan[j];
      accumulate_wg(Un, h, h, dan.data(), dq.data());
      accumulate_wg(Wn, d, h, dan.data(), dx.data());

      for (std::size_t j = 0; j < h; ++j) {
        const T dr = dq[j] * hprev[j];
        dhp[j] += dq[j] * r[j];
        dar[j] = dr * r[j] * (T{1} - r[j]);
        daz[j] = dz[j] * z[j] * (T{1} - z[j]);
      }
      if (gWr) accumulate_outer(x, d, dar.data(), h, gWr);
      if (gUr) accumulate_outer(hprev, h, dar.data(), h, gUr);
      if (gbr) for (std::size_t j = 0; j < h; ++j) gbr[j] += dar[j];
      if (gWz) accumulate_outer(x, d, daz.data(), h, gWz);
      if (gUz) accumulate_outer(hprev, h, daz.data(), h, gUz);
      if (gbz) for (std::size_t j = 0; j < h; ++j) gbz[j] += daz[j];
      accumulate_wg(Ur, h, h, dar.data(), dhp.data());
      accumulate_wg(Uz, h, h, daz.data(), dhp.data());
      if (gE) {
        accumulate_wg(Wr, d, h, dar.data(), dx.data());
        accumulate_wg(Wz, d, h, daz.data(), dx.data());
        T* row = gE + static_cast<std::size_t>(ids[t]) * d;
        for (std::size_t i = 0; i < d; ++i) row[i] += dx[i];
      }
      dh.swap(dhp);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Optimizer and bookkeeping

void adam_step(MolModel& model, const Gradients<float>& grads, AdamState& state,
               double learning_rate) {
  auto& blocks = model.blocks();
  if (grads.size() != blocks.size()) throw ConfigError("gradient set does not match the model");
  state.first_moment.resize(blocks.size());
  state.second_moment.resize(blocks.size());
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const float b1 = static_cast<float>(state.beta1);
  const float b2 = static_cast<float>(state.beta2);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].frozen || !grads[i]) continue;
    auto& value = blocks[i].value;
    const auto& g = *grads[i];
    if (g.shape != value.shape) throw ConfigError("gradient shape mismatch for " + blocks[i].name);
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (!m) m = Tensor(value.shape);
    if (!v) v = Tensor(value.shape);
    if (m->shape != value.shape || v->shape != value.shape) {
      throw ConfigError("optimizer state shape mismatch for " + blocks[i].name);
    }
    for (std::size_t j = 0; j < value.size(); ++j) {
      const float gj = g.data[j];
      m->data[j] = b1 * m->data[j] + (1.0f - b1) * gj;
      v->data[j] = b2 * v->data[j] + (1.0f - b2) * gj * gj;
      const double m_hat = m->data[j] / c1;
      const double v_hat = v->data[j] / c2;
      value.data[j] -= static_cast<float>(learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

template <typename T>
ParamCounts param_count(const BasicMolModel<T>& model) {
  ParamCounts c;
  const auto& blocks = model.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::size_t n = blocks[i].value.size();
    c.total += n;
    if (!blocks[i].frozen) c.trainable += n;
    if (i < kStemBlockCount) c.stem += n;
  }
  for (std::size_t b = 0; b < model.branch_count(); ++b) {
    std::size_t n = 0;
    for (std::size_t i = model.branch_begin(b); i < model.branch_end(b); ++i) n += blocks[i].value.size();
    c.per_branch.push_back(n);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Serialization
//
// Layout (all integers little-endian):
//   8 bytes   magic "VULNMOL\0"
//   u32       format version
//   u64       header length N
//   N bytes   JSON header: stem, branches, vocab_fingerprint, blocks
//             (name, shape, frozen) in storage order
//   ...       every block's values as IEEE-754 float32, in header order
//   u64       FNV-1a 64 checksum of all preceding bytes

namespace {

constexpr char kMagic[8] = {'V', 'U', 'L', 'N', 'M', 'O', 'L', '\0'};

template <typename Int>
void put_le(std::string& out, Int v) {
  for (std::size_t i = 0; i < sizeof(Int); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename Int>
Int get_le(const std::string& in, std::size_t& pos) {
  if (in.size() - pos < sizeof(Int) || pos > in.size()) throw LoadError("model file is truncated");
  Int v = 0;
  for (std::size_t i = 0; i < sizeof(Int); ++i) {
    v |= static_cast<Int>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(Int);
  return v;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace

void save_model(const MolModel& model, const std::string& path) {
  nlohmann::json header;
  const auto& s = model.stem();
  header["stem"] = {{"vocab_size", s.vocab_size},
                    {"embedding_dim", s.embedding_dim},
                    {"gru_hidden", s.gru_hidden},
                    {"dropout_rate", s.dropout_rate},
                    {"max_sequence_length", s.max_sequence_length}};
  header["branches"] = nlohmann::json::array();
  for (const auto& b : model.branches()) {
    header["branches"].push_back({{"class_name", b.class_name}, {"dense_widths", b.dense_widths}});
  }
  header["vocab_fingerprint"] = model.vocab_fingerprint();
  header["blocks"] = nlohmann::json::array();
  for (const auto& b : model.blocks()) {
    header["blocks"].push_back({{"name", b.name}, {"shape", b.value.shape}, {"frozen", b.frozen}});
  }
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kModelFormatVersion);
  put_le<std::uint64_t>(out, header_text.size());
  out += header_text;
  for (const auto& b : model.blocks()) {
    for (float v : b.value.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  put_le<std::uint64_t>(out, fnv1a(out));

  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error("write failed: " + path);
}

MolModel load_model(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw LoadError("cannot open model " + path);
  const std::string in((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  if (in.size() < sizeof kMagic || !std::equal(kMagic, kMagic + sizeof kMagic, in.begin())) {
    throw LoadError(path + " is not a model file");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = get_le<std::uint32_t>(in, pos);
  if (version != kModelFormatVersion) {
    throw LoadError("model format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kModelFormatVersion) + ")");
  }
  if (in.size() < 8 || pos > in.size() - 8) throw LoadError("model file is truncated");
  std::size_t tail = in.size() - 8;
  const auto stored_sum = get_le<std::uint64_t>(in, tail);
  if (fnv1a(std::string_view(in).substr(0, in.size() - 8)) != stored_sum) {
    throw LoadError("model file checksum mismatch (truncated or corrupt)");
  }
  const auto header_len = get_le<std::uint64_t>(in, pos);
  if (header_len > in.size() - 8 - pos) throw LoadError("model file is truncated");

  MolModel model;
  try {
    const auto header = nlohmann::json::parse(in.substr(pos, header_len));
    pos += header_len;
    const auto& s = header.at("stem");
    model.stem_.vocab_size = s.at("vocab_size");
    model.stem_.embedding_dim = s.at("embedding_dim");
    model.stem_.gru_hidden = s.at("gru_hidden");
    model.stem_.dropout_rate = s.at("dropout_rate");
    model.stem_.max_sequence_length = s.at("max_sequence_length");
    model.stem_.validate();
    model.vocab_fingerprint_ = header.at("vocab_fingerprint");

    // Rebuild the expected layout and check the stored one against it.
    auto expected = init_model_as<float>(model.stem_, {BranchConfig{"_", {1}}}, 0);
    expected.blocks_.resize(kStemBlockCount);
    expected.branches_.clear();
    expected.branch_offsets_ = {kStemBlockCount};
    for (const auto& b : header.at("branches")) {
      BranchConfig config{b.at("class_name"), b.at("dense_widths").get<std::vector<std::size_t>>()};
      expected.add_branch(config, 0);
    }
    const auto& stored = header.at("blocks");
    if (stored.size() != expected.blocks_.size()) throw LoadError("model block count mismatch");
    for (std::size_t i = 0; i < stored.size(); ++i) {
      auto& b = expected.blocks_[i];
      if (stored[i].at("name") != b.name ||
          stored[i].at("shape").get<std::vector<std::size_t>>() != b.value.shape) {
        throw LoadError("model block " + std::to_string(i) + " does not match its configuration");
      }
      b.frozen = stored[i].at("frozen");
      for (auto& v : b.value.data) v = std::bit_cast<float>(get_le<std::uint32_t>(in, pos));
    }
    model.branches_ = std::move(expected.branches_);
    model.blocks_ = std::move(expected.blocks_);
    model.branch_offsets_ = std::move(expected.branch_offsets_);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("model header is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("model configuration is invalid: ") + e.what());
  }
  if (pos != in.size() - 8) throw LoadError("model file has trailing data");
  return model;
}

// ---------------------------------------------------------------------------

#define VULNSCAN_INSTANTIATE(T)                                                                  \
  template struct BasicTensor<T>;                                                                \
  template class BasicMolModel<T>;                                                               \
  template BasicMolModel<T> init_model_as<T>(const StemConfig&, const std::vector<BranchConfig>&, \
                                             std::uint64_t);                                     \
  template BasicTensor<T> forward<T>(const BasicMolModel<T>&,                                    \
                                     std::span<const tokenizer::TokenSequence>, Mode,            \
                                     std::uint64_t, ForwardCache<T>*);                           \
  template double bce_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template Gradients<T> backward<T>(const BasicMolModel<T>&, const ForwardCache<T>&,             \
                                    const BasicTensor<T>&, const std::vector<bool>*);            \
  template ParamCounts param_count<T>(const BasicMolModel<T>&);

VULNSCAN_INSTANTIATE(float)
VULNSCAN_INSTANTIATE(double)
#undef VULNSCAN_INSTANTIATE

template BasicMolModel<double> BasicMolModel<float>::cast<double>() const;
template BasicMolModel<float> BasicMolModel<double>::cast<float>() const;
template BasicMolModel<float> BasicMolModel<float>::cast<float>() const;

}  // namespace vulnscan::mol
