#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "vulnscan/corpus.hpp"
#include "vulnscan/error.hpp"
#include "vulnscan/random.hpp"
#include "vulnscan/trainer.hpp"

using namespace vulnscan;
using namespace vulnscan::trainer;

namespace {

constexpr std::size_t kSeqLen = 48;

struct Fixture {
  corpus::SynthSpec spec;
  std::vector<corpus::ContractRecord> records;
  tokenizer::Vocabulary vocab;

  explicit Fixture(std::size_t classes = 3, std::size_t per_class = 30, std::size_t clean = 30) {
    spec = corpus::SynthSpec::defaults(classes, per_class, clean);
    spec.min_length = 16;
    spec.max_length = kSeqLen;
    records = corpus::synth_generate(spec, 5);
    vocab = tokenizer::Vocabulary::fit(records);
  }

  EncodedSet encode(std::size_t begin, std::size_t count,
                    std::vector<std::string> names = {}) const {
    if (names.empty()) names = spec.catalog.names();
    std::vector<corpus::ContractRecord> part(records.begin() + begin, records.begin() + begin + count);
    if (names.size() < spec.catalog.size()) {
      // Keep only the requested leading columns.
      for (auto& r : part) r.labels.resize(names.size());
    }
    return encode_records(part, names, vocab, kSeqLen);
  }

  mol::MolModel model(std::size_t branches, std::uint64_t seed = 1) const {
    mol::StemConfig stem;
    stem.vocab_size = vocab.size();
    stem.embedding_dim = 8;
    stem.gru_hidden = 16;
    stem.max_sequence_length = kSeqLen;
    std::vector<mol::BranchConfig> cfg;
    for (std::size_t b = 0; b < branches; ++b) cfg.push_back({spec.catalog.name(b + 1), {16, 1}});
    return mol::init_model(stem, cfg, seed);
  }
};

std::size_t steps_for(mol::MolModel model, const std::vector<EncodedSet>& chunks, TrainConfig cfg) {
  std::size_t observed = 0;
  const auto h = train(model, chunks, cfg, nullptr, [&](std::size_t step, double) { observed = step; });
  CHECK(observed == h.optimizer_steps);
  CHECK(h.step_losses.size() == h.optimizer_steps);
  return h.optimizer_steps;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.threshold = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.global_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("step-count law") {
  Fixture fx(3, 30, 30);
  const auto model = fx.model(3);
  TrainConfig cfg;

  CHECK(steps_for(model, {fx.encode(0, 64)}, cfg) == 2);
  const std::vector<EncodedSet> two{fx.encode(0, 40), fx.encode(40, 24)};
  CHECK(steps_for(model, two, cfg) == 3);
  cfg.local_epochs = 3;
  cfg.global_epochs = 2;
  CHECK(steps_for(model, two, cfg) == 18);

  Rng rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    TrainConfig c;
    c.batch_size = 1 + rng.below(40);
    c.local_epochs = 1 + rng.below(2);
    c.global_epochs = 1 + rng.below(2);
    std::vector<EncodedSet> chunks;
    std::size_t begin = 0, per_global = 0;
    for (std::size_t k = 0, n = 1 + rng.below(3); k < n; ++k) {
      const std::size_t size = 1 + rng.below(40);
      chunks.push_back(fx.encode(begin, size));
      begin += size;
      per_global += c.local_epochs * ((size + c.batch_size - 1) / c.batch_size);
    }
    CHECK(steps_for(model, chunks, c) == c.global_epochs * per_global);
  }
}

TEST_CASE("history layout") {
  Fixture fx;
  auto model = fx.model(3);
  TrainConfig cfg;
  cfg.local_epochs = 2;
  cfg.global_epochs = 2;
  const auto validation = fx.encode(100, 20);
  const auto h = train(model, {fx.encode(0, 40), fx.encode(40, 30)}, cfg, &validation);
  REQUIRE(h.entries.size() == 2 * (2 * 2 + 1));
  std::size_t i = 0;
  for (std::size_t g = 1; g <= 2; ++g) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t l = 1; l <= 2; ++l, ++i) {
        CHECK(h.entries[i].global_epoch == g);
        CHECK(h.entries[i].chunk == c);
        CHECK(h.entries[i].local_epoch == l);
        CHECK(h.entries[i].validation.has_value());
      }
    }
    CHECK_FALSE(h.entries[i].chunk.has_value());
    ++i;
  }
  for (std::size_t k = 1; k < h.entries.size(); ++k) {
    CHECK(h.entries[k].wall_seconds >= h.entries[k - 1].wall_seconds);
  }

  const auto path = (std::filesystem::temp_directory_path() / "vulnscan_history.csv").string();
  write_history(h, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "global_epoch,local_epoch,chunk,train_loss,val_f1_weighted,val_hamming,wall_seconds");
  std::size_t rows = 0, summaries = 0;
  while (std::getline(in, line)) {
    ++rows;
    summaries += line.find(",all,") != std::string::npos;
  }
  CHECK(rows == h.entries.size());
  CHECK(summaries == 2);
  std::filesystem::remove(path);
}

TEST_CASE("training is deterministic and reduces loss") {
  Fixture fx(3, 40, 40);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.global_epochs = 4;
  cfg.seed = 7;
  const std::vector<EncodedSet> chunks{fx.encode(0, 80), fx.encode(80, 80)};
  auto a = fx.model(3);
  auto b = fx.model(3);
  const auto ha = train(a, chunks, cfg);
  const auto hb = train(b, chunks, cfg);
  CHECK(ha.step_losses == hb.step_losses);
  for (std::size_t i = 0; i < a.blocks().size(); ++i) CHECK(a.blocks()[i].value == b.blocks()[i].value);
  CHECK(ha.step_losses.back() < ha.step_losses.front());
  CHECK(ha.entries.back().train_loss < ha.entries.front().train_loss);
}

TEST_CASE("train contracts") {
  Fixture fx;
  auto model = fx.model(3);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(model, {}, cfg), ConfigError);
  CHECK_THROWS_AS(train(model, {fx.encode(0, 10, {"Callstack Depth", "Reentrancy"})}, cfg), ConfigError);
  auto renamed = fx.encode(0, 10);
  renamed.class_names[0] = "Nope";
  CHECK_THROWS_AS(train(model, {renamed}, cfg), ConfigError);
  model.set_branch_frozen(2, true);
  CHECK_NOTHROW(train(model, {fx.encode(0, 10, {"Callstack Depth", "Reentrancy"})}, cfg));
  model.set_stem_frozen(true);
  for (std::size_t b = 0; b < 3; ++b) model.set_branch_frozen(b, true);
  CHECK_THROWS_AS(train(model, {fx.encode(0, 10)}, cfg), ConfigError);
}

TEST_CASE("frozen branch without a label column is untouched") {
  Fixture fx;
  auto model = fx.model(3);
  model.set_branch_frozen(2, true);
  const auto before = model;
  train(model, {fx.encode(0, 40, {"Callstack Depth", "Reentrancy"})}, TrainConfig{});
  for (std::size_t i = model.branch_begin(2); i < model.branch_end(2); ++i) {
    CHECK(model.blocks()[i].value == before.blocks()[i].value);
  }
  CHECK_FALSE(model.blocks()[0].value == before.blocks()[0].value);
}

TEST_CASE("transfer_train") {
  Fixture fx(5, 20, 20);
  auto model = fx.model(3);
  train(model, {fx.encode(0, 60, {"Callstack Depth", "Reentrancy", "Multiple Sends"})}, TrainConfig{});
  const auto probe = fx.encode(60, 40);
  const auto before = predict(model, probe.sequences);
  const auto stem_before = model;

  const std::vector<mol::BranchConfig> extra{{fx.spec.catalog.name(4), {16, 1}},
                                             {fx.spec.catalog.name(5), {16, 1}}};
  const std::vector<std::string> extra_names{fx.spec.catalog.name(4), fx.spec.catalog.name(5)};
  auto new_set = [&](std::size_t begin, std::size_t count) {
    std::vector<corpus::ContractRecord> part(fx.records.begin() + begin, fx.records.begin() + begin + count);
    for (auto& r : part) r.labels = {r.labels[3], r.labels[4]};
    return encode_records(part, extra_names, fx.vocab, kSeqLen);
  };
  TrainConfig cfg;
  cfg.local_epochs = 2;
  const auto h = transfer_train(model, {new_set(0, 50), new_set(50, 20)}, extra, cfg);

  CHECK(model.branch_count() == 5);
  CHECK(h.trainable_parameters == mol::branch_param_count(extra[0], 16) * 2);
  CHECK(h.optimizer_steps == 2 * (2 + 1));
  CHECK(model.stem_frozen());
  for (std::size_t b = 0; b < 3; ++b) CHECK(model.branch_frozen(b));
  CHECK_FALSE(model.branch_frozen(3));

  const auto after = predict(model, probe.sequences);
  for (std::size_t s = 0; s < probe.size(); ++s) {
    for (std::size_t k = 0; k < 3; ++k) CHECK(after.at(s, k) == before.at(s, k));
  }
  for (std::size_t i = 0; i < model.branch_end(2); ++i) {
    CHECK(model.blocks()[i].value == stem_before.blocks()[i].value);
  }

  SUBCASE("errors leave the model untouched") {
    const auto snapshot = model;
    CHECK_THROWS_AS(transfer_train(model, {new_set(0, 10)}, {}, cfg), ConfigError);
    CHECK_THROWS_AS(transfer_train(model, {fx.encode(0, 10)}, extra, cfg), ConfigError);
    CHECK(model.branch_count() == snapshot.branch_count());
  }
}

TEST_CASE("evaluate") {
  Fixture fx(2, 20, 20);
  const auto set = fx.encode(0, 60, {"Callstack Depth", "Reentrancy"});

  SUBCASE("constant 0.5 model predicts everything positive") {
    auto model = fx.model(2);
    for (auto& blk : model.blocks()) {
      if (blk.name.starts_with("branch")) std::fill(blk.value.data.begin(), blk.value.data.end(), 0.0f);
    }
    const auto report = evaluate(model, set, 0.5);
    for (std::size_t c = 0; c < 2; ++c) {
      double prevalence = 0;
      for (std::size_t i = 0; i < set.size(); ++i) prevalence += set.labels.at(i, c);
      prevalence /= static_cast<double>(set.size());
      CHECK(report.per_class[c].recall == 1.0);
      CHECK(report.per_class[c].precision == doctest::Approx(prevalence).epsilon(1e-12));
      CHECK(report.per_class[c].fpr == 1.0);
    }
    CHECK(report.mean_bce == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    const auto again = evaluate(model, set, 0.5);
    CHECK(report_csv(again) == report_csv(report));
  }

  SUBCASE("perfect model") {
    // Hand-set GRU latch: hidden unit c flips to +1 on the first token of
    // motif c and stays there, so each head sees +-1.
    mol::StemConfig stem;
    stem.vocab_size = fx.vocab.size();
    stem.embedding_dim = 2;
    stem.gru_hidden = 2;
    stem.max_sequence_length = kSeqLen;
    auto model = mol::init_model(stem, {{"Callstack Depth", {1}}, {"Reentrancy", {1}}}, 0);
    auto& blocks = model.blocks();
    auto& emb = blocks[mol::kEmbedding].value;
    std::fill(emb.data.begin(), emb.data.end(), -1.0f);
    for (std::size_t c = 0; c < 2; ++c) emb.at(fx.vocab.id_of(fx.spec.motifs[c].tokens[0]), c) = 1.0f;
    for (auto idx : {mol::kUpdateInput, mol::kUpdateRecurrent, mol::kResetInput, mol::kResetRecurrent,
                     mol::kCandidateInput, mol::kCandidateRecurrent}) {
      std::fill(blocks[idx].value.data.begin(), blocks[idx].value.data.end(), 0.0f);
    }
    std::fill(blocks[mol::kUpdateBias].value.data.begin(), blocks[mol::kUpdateBias].value.data.end(), -20.0f);
    std::fill(blocks[mol::kResetBias].value.data.begin(), blocks[mol::kResetBias].value.data.end(), 20.0f);
    std::fill(blocks[mol::kCandidateBias].value.data.begin(), blocks[mol::kCandidateBias].value.data.end(), 5.0f);
    for (std::size_t c = 0; c < 2; ++c) {
      blocks[mol::kCandidateInput].value.at(c, c) = 10.0f;
      blocks[mol::kCandidateRecurrent].value.at(c, c) = 10.0f;
      auto& head = blocks[model.branch_begin(c)].value;
      std::fill(head.data.begin(), head.data.end(), 0.0f);
      head.at(c, 0) = 10.0f;
    }
    const auto report = evaluate(model, set, 0.5);
    for (const auto& c : report.per_class) CHECK(c.f1 == 1.0);
    CHECK(report.hamming_loss == 0.0);
    CHECK(*report.weighted_f1 == 1.0);
    CHECK(report.mean_bce < 1e-3);
  }

  SUBCASE("binarize tie rule") {
    mol::Tensor p({1, 3});
    p.data = {0.5f, 0.4999f, 0.9f};
    CHECK(binarize(p, 0.5) == std::vector<corpus::LabelVector>{{1, 0, 1}});
  }

  SUBCASE("empty set") {
    EncodedSet empty;
    empty.class_names = set.class_names;
    empty.labels = mol::Tensor({0, 2});
    CHECK_THROWS_AS(evaluate(fx.model(2), empty), DataError);
  }
}
