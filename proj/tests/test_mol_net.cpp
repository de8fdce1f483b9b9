#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradient_check.hpp"
#include "vulnscan/error.hpp"
#include "vulnscan/mol_net.hpp"

using namespace vulnscan;
using namespace vulnscan::mol;

namespace {

std::vector<BranchConfig> default_branches(std::size_t n) {
  std::vector<BranchConfig> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"class" + std::to_string(i + 1), {128, 64, 1}});
  return out;
}

StemConfig small_stem() {
  StemConfig s;
  s.vocab_size = 12;
  s.embedding_dim = 4;
  s.gru_hidden = 8;
  s.max_sequence_length = 10;
  return s;
}

std::vector<tokenizer::TokenSequence> random_batch(std::size_t n, const StemConfig& s, Rng& rng) {
  std::vector<tokenizer::TokenSequence> batch;
  for (std::size_t i = 0; i < n; ++i) {
    tokenizer::TokenSequence seq;
    seq.ids.assign(s.max_sequence_length, 0);
    seq.true_length = rng.below(s.max_sequence_length + 1);
    for (std::size_t t = 0; t < seq.true_length; ++t) {
      seq.ids[t] = static_cast<tokenizer::TokenId>(2 + rng.below(s.vocab_size - 2));
    }
    batch.push_back(seq);
  }
  return batch;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vulnscan_test_" + name)).string();
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(branch_param_count({"x", {128, 64, 1}}, 64) == 16641);
  CHECK(branch_param_count({"x", {1}}, 64) == 65);

  StemConfig stem;
  stem.vocab_size = 100;
  const auto model = init_model(stem, default_branches(6), 1);
  const auto counts = param_count(model);
  REQUIRE(counts.per_branch.size() == 6);
  for (auto n : counts.per_branch) CHECK(n == 16641);
  CHECK(counts.total - counts.stem == 99846);
  CHECK(counts.stem == stem_param_count(stem));
  CHECK(counts.trainable == counts.total);

  const auto one = init_model(stem, {{"solo", {1}}}, 1);
  CHECK(param_count(one).per_branch.front() == 65);

  auto frozen = model;
  frozen.set_stem_frozen(true);
  for (std::size_t b = 0; b < frozen.branch_count(); ++b) frozen.set_branch_frozen(b, true);
  CHECK(param_count(frozen).trainable == 0);
}

TEST_CASE("reference stem accounts for the 115,846 total") {
  const auto stem = StemConfig::reference();
  CHECK(stem_param_count(stem) == 16000);
  CHECK(stem_param_count(stem) + 6 * branch_param_count({"x", {128, 64, 1}}, 64) == 115846);
  const auto model = init_model(stem, default_branches(6), 3);
  CHECK(param_count(model).total == 115846);
}

TEST_CASE("config validation") {
  StemConfig s = small_stem();
  s.dropout_rate = 1.0;
  CHECK_THROWS_AS(init_model(s, default_branches(1), 0), ConfigError);
  s = small_stem();
  s.gru_hidden = 0;
  CHECK_THROWS_AS(init_model(s, default_branches(1), 0), ConfigError);
  CHECK_THROWS_AS(init_model(small_stem(), {}, 0), ConfigError);
  CHECK_THROWS_AS(init_model(small_stem(), {{"x", {4, 2}}}, 0), ConfigError);
}

TEST_CASE("init is deterministic with zero biases and fan-in bounds") {
  const auto a = init_model(small_stem(), default_branches(2), 42);
  const auto b = init_model(small_stem(), default_branches(2), 42);
  const auto c = init_model(small_stem(), default_branches(2), 43);
  bool differs = false;
  for (std::size_t i = 0; i < a.blocks().size(); ++i) {
    CHECK(a.blocks()[i].value == b.blocks()[i].value);
    differs |= !(a.blocks()[i].value == c.blocks()[i].value);
    const auto& blk = a.blocks()[i];
    if (blk.name.ends_with("bias")) {
      for (float v : blk.value.data) CHECK(v == 0.0f);
    } else {
      const std::size_t fan_in = blk.name == "embedding" ? blk.value.cols() : blk.value.rows();
      const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (float v : blk.value.data) CHECK(std::abs(v) <= limit);
    }
    CHECK_FALSE(blk.frozen);
  }
  CHECK(differs);
}

TEST_CASE("forward behaviour") {
  const auto model = init_model(small_stem(), default_branches(3), 5);
  Rng rng(1);

  SUBCASE("all-padding input gives 0.5 everywhere at init") {
    tokenizer::TokenSequence empty{std::vector<tokenizer::TokenId>(10, 0), 0};
    const std::vector<tokenizer::TokenSequence> batch{empty, empty};
    const auto p = forward(model, std::span<const tokenizer::TokenSequence>(batch), Mode::kEval, 0);
    REQUIRE(p.shape == std::vector<std::size_t>{2, 3});
    for (float v : p.data) CHECK(v == 0.5f);
  }

  SUBCASE("eval mode is deterministic and in (0,1)") {
    const auto batch = random_batch(6, model.stem(), rng);
    const auto view = std::span<const tokenizer::TokenSequence>(batch);
    const auto p1 = forward(model, view, Mode::kEval, 1);
    const auto p2 = forward(model, view, Mode::kEval, 99);
    CHECK(p1 == p2);
    for (float v : p1.data) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }

  SUBCASE("train mode dropout is seeded") {
    const auto batch = random_batch(6, model.stem(), rng);
    const auto view = std::span<const tokenizer::TokenSequence>(batch);
    CHECK(forward(model, view, Mode::kTrain, 3) == forward(model, view, Mode::kTrain, 3));
    CHECK_FALSE(forward(model, view, Mode::kTrain, 3) == forward(model, view, Mode::kTrain, 4));
  }

  SUBCASE("padding invariance") {
    for (int trial = 0; trial < 20; ++trial) {
      auto batch = random_batch(1, model.stem(), rng);
      auto& seq = batch.front();
      seq.true_length = std::min<std::size_t>(seq.true_length, 6);
      std::fill(seq.ids.begin() + seq.true_length, seq.ids.end(), 0);
      std::vector<tokenizer::TokenSequence> longer{seq};
      longer.front().ids.resize(40, 0);
      const auto a = forward(model, std::span<const tokenizer::TokenSequence>(batch), Mode::kEval, 0);
      const auto b = forward(model, std::span<const tokenizer::TokenSequence>(longer), Mode::kEval, 0);
      CHECK(a == b);
    }
  }

  SUBCASE("out-of-range id is an input error") {
    tokenizer::TokenSequence bad{std::vector<tokenizer::TokenId>(10, 0), 1};
    bad.ids[0] = 12;
    const std::vector<tokenizer::TokenSequence> batch{bad};
    CHECK_THROWS_AS(forward(model, std::span<const tokenizer::TokenSequence>(batch), Mode::kEval, 0),
                    DataError);
  }
}

TEST_CASE("branch independence") {
  auto model = init_model(small_stem(), default_branches(3), 8);
  Rng rng(2);
  const auto batch = random_batch(8, model.stem(), rng);
  const auto view = std::span<const tokenizer::TokenSequence>(batch);
  const auto before = forward(model, view, Mode::kEval, 0);
  for (std::size_t i = model.branch_begin(1); i < model.branch_end(1); ++i) {
    for (auto& v : model.blocks()[i].value.data) v += 0.25f;
  }
  const auto after = forward(model, view, Mode::kEval, 0);
  bool changed = false;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    CHECK(after.at(s, 0) == before.at(s, 0));
    CHECK(after.at(s, 2) == before.at(s, 2));
    changed |= after.at(s, 1) != before.at(s, 1);
  }
  CHECK(changed);
}

TEST_CASE("bce_loss") {
  Tensor y({1, 1}), p({1, 1});
  y.data = {1};
  p.data = {0.5f};
  CHECK(bce_loss(y, p) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  p.data = {1.0f};
  CHECK(bce_loss(y, p) < 1e-6);

  Tensor y2({1, 2}), p2({1, 2});
  y2.data = {1, 0};
  p2.data = {0.9f, 0.1f};
  const double expected = -0.5 * (std::log(static_cast<double>(0.9f)) + std::log(1.0 - static_cast<double>(0.1f)));
  CHECK(bce_loss(y2, p2) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(bce_loss(y2, p2) == doctest::Approx(0.10536).epsilon(1e-4));

  p.data = {0.0f};
  CHECK(std::isfinite(bce_loss(y, p)));
  CHECK_THROWS_AS(bce_loss(y, p2), ConfigError);
}

TEST_CASE("gradients match finite differences") {
  SUBCASE("reference tiny model: vocab 8, d 4, hidden 5, seq 6, batch 2") {
    StemConfig s;
    s.vocab_size = 8;
    s.embedding_dim = 4;
    s.gru_hidden = 5;
    s.max_sequence_length = 6;
    auto model = init_model(s, {{"a", {3, 2, 1}}, {"b", {1}}}, 17);
    Rng rng(3);
    for (auto& blk : model.blocks()) {
      if (blk.name.ends_with("bias")) for (auto& v : blk.value.data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
    const auto batch = random_batch(2, s, rng);
    Tensor labels({2, 2});
    labels.data = {1, 0, 0, 1};
    for (auto mode : {Mode::kEval, Mode::kTrain}) {
      const auto r = testing::check_gradients(model, batch, labels, mode, 11);
      CHECK(r.max_rel_error < 1e-4);
      CHECK(r.max_float_rel_error < 1e-3);
      CHECK(r.checked > 100);
    }
  }
  SUBCASE("randomized models") {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
      const auto p = testing::random_tiny_problem(seed);
      const auto r = testing::check_gradients(p.model, p.batch, p.labels, p.mode, p.seed);
      INFO("seed " << seed << " worst block " << r.worst_block);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("head bias gradient has the closed form mean(p - y)") {
  auto model = init_model(small_stem(), {{"only", {1}}}, 4);
  for (auto& v : model.blocks()[model.branch_begin(0)].value.data) v = 0.0f;  // zero-weight head
  Rng rng(6);
  const auto batch = random_batch(5, model.stem(), rng);
  Tensor labels({5, 1});
  labels.data = {1, 0, 1, 1, 0};
  ForwardCache<float> cache;
  const auto p = forward(model, std::span<const tokenizer::TokenSequence>(batch), Mode::kEval, 0, &cache);
  const auto grads = backward(model, cache, labels);
  double mean = 0;
  for (std::size_t s = 0; s < 5; ++s) mean += (p.data[s] - labels.data[s]) / 5.0;
  CHECK(p.data[0] == 0.5f);
  CHECK(grads[model.branch_begin(0) + 1]->data[0] == doctest::Approx(mean).epsilon(1e-6));
  CHECK(mean == doctest::Approx(0.5 - 0.6));
}

TEST_CASE("backward contracts") {
  auto model = init_model(small_stem(), default_branches(2), 9);
  Rng rng(4);
  const auto batch = random_batch(3, model.stem(), rng);
  Tensor labels({3, 2});
  ForwardCache<float> cache;
  CHECK_THROWS_AS(backward(model, cache, labels), UsageError);

  forward(model, std::span<const tokenizer::TokenSequence>(batch), Mode::kTrain, 1, &cache);
  CHECK_THROWS_AS(backward(model, cache, Tensor({2, 2})), UsageError);

  model.set_stem_frozen(true);
  const auto grads = backward(model, cache, labels);
  for (std::size_t i = 0; i < kStemBlockCount; ++i) CHECK_FALSE(grads[i].has_value());
  for (std::size_t i = kStemBlockCount; i < model.blocks().size(); ++i) CHECK(grads[i].has_value());

  auto wider = model;
  wider.add_branch({"extra", {1}}, 3);
  CHECK_THROWS_AS(backward(wider, cache, Tensor({3, 3})), UsageError);
}

TEST_CASE("adam_step") {
  SUBCASE("first step on a scalar moves by lr") {
    auto model = init_model(small_stem(), {{"h", {1}}}, 1);
    const std::size_t bias = model.branch_begin(0) + 1;
    Gradients<float> grads(model.blocks().size());
    grads[bias] = Tensor({1}, 1.0f);
    AdamState state;
    const float before = model.blocks()[bias].value.data[0];
    adam_step(model, grads, state, 0.001);
    const double expected = -0.001 * 1.0 / (1.0 + 1e-8);
    CHECK(model.blocks()[bias].value.data[0] - before == doctest::Approx(expected).epsilon(1e-6));
    CHECK(state.step == 1);
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    auto model = init_model(small_stem(), default_branches(1), 2);
    const auto before = model;
    Gradients<float> grads;
    for (const auto& b : model.blocks()) grads.push_back(Tensor(b.value.shape));
    AdamState state;
    adam_step(model, grads, state);
    for (std::size_t i = 0; i < model.blocks().size(); ++i) {
      CHECK(model.blocks()[i].value == before.blocks()[i].value);
    }
  }
  SUBCASE("frozen blocks are never written") {
    auto model = init_model(small_stem(), default_branches(2), 2);
    model.set_stem_frozen(true);
    model.set_branch_frozen(0, true);
    const auto before = model;
    Gradients<float> grads;
    for (const auto& b : model.blocks()) grads.push_back(Tensor(b.value.shape, 0.7f));
    AdamState state;
    adam_step(model, grads, state);
    for (std::size_t i = 0; i < model.branch_end(0); ++i) {
      CHECK(model.blocks()[i].value == before.blocks()[i].value);
    }
    CHECK_FALSE(model.blocks()[model.branch_begin(1)].value == before.blocks()[model.branch_begin(1)].value);
  }
}

TEST_CASE("add_branch") {
  StemConfig stem = small_stem();
  stem.gru_hidden = 64;
  auto model = init_model(stem, default_branches(6), 12);
  Rng rng(5);
  const auto batch = random_batch(4, model.stem(), rng);
  const auto view = std::span<const tokenizer::TokenSequence>(batch);
  const auto before = forward(model, view, Mode::kEval, 0);
  const auto trainable_before = param_count(model).total;

  model.add_branch({"class7", {128, 64, 1}}, 1);
  model.add_branch({"class8", {128, 64, 1}}, 2);
  CHECK(param_count(model).total - trainable_before == 33282);
  CHECK(model.class_names().back() == "class8");
  const auto after = forward(model, view, Mode::kEval, 0);
  REQUIRE(after.cols() == 8);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (std::size_t k = 0; k < 6; ++k) CHECK(after.at(s, k) == before.at(s, k));
  }
  CHECK_THROWS_AS(model.add_branch({"class3", {1}}, 0), ConfigError);
  CHECK_THROWS_AS(model.add_branch({"bad", {5}}, 0), ConfigError);
}

TEST_CASE("save and load") {
  auto model = init_model(small_stem(), default_branches(2), 21);
  model.set_vocab_fingerprint("0123456789abcdef");
  model.set_branch_frozen(1, true);
  const auto path = temp_path("model.bin");
  save_model(model, path);
  const auto loaded = load_model(path);
  CHECK(loaded.stem() == model.stem());
  CHECK(loaded.branches() == model.branches());
  CHECK(loaded.vocab_fingerprint() == model.vocab_fingerprint());
  CHECK(loaded.branch_frozen(1));
  CHECK_FALSE(loaded.branch_frozen(0));
  Rng rng(8);
  const auto batch = random_batch(5, model.stem(), rng);
  const auto view = std::span<const tokenizer::TokenSequence>(batch);
  CHECK(forward(loaded, view, Mode::kEval, 0) == forward(model, view, Mode::kEval, 0));

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  SUBCASE("truncated file") {
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_model(path), LoadError);
    std::ofstream(path, std::ios::binary) << bytes.substr(0, 10);
    CHECK_THROWS_AS(load_model(path), LoadError);
  }
  SUBCASE("version mismatch names both versions") {
    auto wrong = bytes;
    wrong[8] = 7;
    std::ofstream(path, std::ios::binary) << wrong;
    try {
      load_model(path);
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      const std::string msg = e.what();
      CHECK(msg.find('7') != std::string::npos);
      CHECK(msg.find('1') != std::string::npos);
    }
  }
  SUBCASE("flipped parameter byte fails the checksum") {
    auto corrupt = bytes;
    corrupt[bytes.size() - 20] ^= 0x40;
    std::ofstream(path, std::ios::binary) << corrupt;
    CHECK_THROWS_AS(load_model(path), LoadError);
  }
  SUBCASE("not a model") {
    std::ofstream(path, std::ios::binary) << "hello";
    CHECK_THROWS_AS(load_model(path), LoadError);
  }
  std::filesystem::remove(path);
}
