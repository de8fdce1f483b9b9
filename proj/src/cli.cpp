// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "vulnscan/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vulnscan/corpus.hpp"
#include "vulnscan/error.hpp"
#include "vulnscan/evm_bytecode.hpp"
#include "vulnscan/metrics.hpp"
#include "vulnscan/mol_net.hpp"
#include "vulnscan/random.hpp"
#include "vulnscan/service.hpp"
#include "vulnscan/tokenizer.hpp"
#include "vulnscan/trainer.hpp"

namespace vulnscan {
namespace {

namespace fs = std::filesystem;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

std::string chunk_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "train_chunk_%03zu.csv", index);
  return buf;
}

// Chunk files of a data directory in index order.
std::vector<corpus::ChunkFile> read_chunk_dir(const std::string& dir) {
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("train_chunk_") && name.ends_with(".csv")) paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw Error("no train_chunk_*.csv files in " + dir);
  std::vector<corpus::ChunkFile> files;
  for (std::size_t i = 0; i < paths.size(); ++i) files.push_back(corpus::read_chunk(paths[i].string(), i));
  return files;
}

struct HyperFlags {
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  double lr = mol::kDefaultLearningRate;
  std::size_t global_epochs = 1;
  std::size_t local_epochs = 1;
  double threshold = 0.5;

  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--batch-size", batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--global-epochs", global_epochs, "Passes over all chunks")->check(CLI::PositiveNumber);
    cmd->add_option("--local-epochs", local_epochs, "Passes over each chunk")->check(CLI::PositiveNumber);
    cmd->add_option("--threshold", threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));
  }

  trainer::TrainConfig config() const {
    trainer::TrainConfig c;
    c.seed = seed;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.global_epochs = global_epochs;
    c.local_epochs = local_epochs;
    c.threshold = threshold;
    return c;
  }
};

void print_history_tail(const trainer::MetricsHistory& h, std::ostream& out) {
  out << "optimizer steps: " << h.optimizer_steps << "\n";
  out << "trainable parameters: " << h.trainable_parameters << "\n";
  if (!h.entries.empty()) out << "final train loss: " << h.entries.back().train_loss << "\n";
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Smart-contract vulnerability detection: bytecode preprocessing, corpus "
               "construction, multi-output GRU training, transfer learning and serving"};
  app.name(args.empty() ? "vulnscan" : args.front());
  app.require_subcommand(1);

  // preprocess
  std::string hex_path;
  auto* preprocess = app.add_subcommand("preprocess", "Emit the normalized opcode text of a hex file");
  preprocess->add_option("hexfile", hex_path, "File holding hex bytecode")->required();

  // synth
  std::string synth_out;
  std::size_t synth_classes = 3, synth_per_class = 200, synth_clean = 200;
  std::size_t synth_min = 32, synth_max = 128;
  double synth_extra = 0.0;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic motif corpus (chunk CSV)");
  synth->add_option("--out", synth_out, "Output CSV")->required();
  synth->add_option("--classes", synth_classes, "Number of catalog classes (1-8)");
  synth->add_option("--per-class", synth_per_class, "Positive records per class");
  synth->add_option("--clean", synth_clean, "Clean records");
  synth->add_option("--min-len", synth_min, "Minimum sequence length");
  synth->add_option("--max-len", synth_max, "Maximum sequence length");
  synth->add_option("--extra-label-rate", synth_extra, "Chance of each additional label");
  synth->add_option("--seed", synth_seed, "Random seed");

  // label
  std::string label_bytecodes, label_reports, label_profiles, label_out;
  std::size_t label_classes = 8;
  auto* label = app.add_subcommand("label", "Arbitrate detector reports into a labeled corpus");
  label->add_option("--bytecodes", label_bytecodes, "CSV address,bytecode (hex)")->required();
  label->add_option("--reports", label_reports, "CSV tool,address,class_id,verdict")->required();
  label->add_option("--profiles", label_profiles, "CSV tool,class_id,f1")->required();
  label->add_option("--out", label_out, "Output corpus CSV")->required();
  label->add_option("--classes", label_classes, "Number of catalog classes");

  // chunk
  std::string chunk_in, chunk_dir;
  std::size_t chunk_size = corpus::kDefaultChunkSize;
  std::uint64_t chunk_seed = 0;
  std::optional<std::size_t> per_class_min, clean_count;
  auto* chunk = app.add_subcommand("chunk", "Balance (optional), split and chunk a corpus");
  chunk->add_option("--in", chunk_in, "Corpus CSV")->required();
  chunk->add_option("--out-dir", chunk_dir, "Output directory")->required();
  chunk->add_option("--chunk-size", chunk_size, "Records per chunk")->check(CLI::PositiveNumber);
  chunk->add_option("--seed", chunk_seed, "Random seed");
  chunk->add_option("--per-class-min", per_class_min, "Balance: positives sampled per class");
  chunk->add_option("--clean-count", clean_count, "Balance: clean records sampled");

  // train
  std::string train_data, train_model, train_vocab, train_history;
  std::size_t embedding_dim = 16, hidden = 64;
  std::size_t max_seq_len = tokenizer::kDefaultMaxSequenceLength;
  double dropout = 0.2;
  HyperFlags train_flags;
  auto* train = app.add_subcommand("train", "Train a multi-output model on a chunk directory");
  train->add_option("--data", train_data, "Directory from `chunk`")->required();
  train->add_option("--model", train_model, "Output model file")->required();
  train->add_option("--vocab", train_vocab, "Output vocabulary file")->required();
  train->add_option("--history", train_history, "Output history CSV");
  train->add_option("--embedding-dim", embedding_dim, "Embedding width")->check(CLI::PositiveNumber);
  train->add_option("--hidden", hidden, "GRU units")->check(CLI::PositiveNumber);
  train->add_option("--dropout", dropout, "Dropout rate")->check(CLI::Range(0.0, 0.99));
  train->add_option("--max-seq-len", max_seq_len, "Truncation length")->check(CLI::PositiveNumber);
  train_flags.attach(train);

  // transfer
  std::string tl_model, tl_vocab, tl_data, tl_out, tl_history;
  HyperFlags tl_flags;
  auto* transfer = app.add_subcommand("transfer", "Add and train branches for new classes");
  transfer->add_option("--model", tl_model, "Trained model")->required();
  transfer->add_option("--vocab", tl_vocab, "Vocabulary of the model")->required();
  transfer->add_option("--data", tl_data, "Chunk directory whose columns are the new classes")->required();
  transfer->add_option("--out", tl_out, "Output model file")->required();
  transfer->add_option("--history", tl_history, "Output history CSV");
  tl_flags.attach(transfer);

  // eval
  std::string ev_model, ev_vocab, ev_data, ev_report;
  double ev_threshold = 0.5;
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a labeled CSV");
  eval->add_option("--model", ev_model, "Model file")->required();
  eval->add_option("--vocab", ev_vocab, "Vocabulary file")->required();
  eval->add_option("--data", ev_data, "Labeled chunk CSV (e.g. test.csv)")->required();
  eval->add_option("--report", ev_report, "Output report CSV");
  eval->add_option("--threshold", ev_threshold, "Decision threshold")->check(CLI::Range(0.0, 1.0));

  // serve
  std::string sv_model, sv_vocab, sv_host = "127.0.0.1";
  int sv_port = 8080;
  bool sv_raw = false;
  auto* serve = app.add_subcommand("serve", "Serve GET /config and POST /predict");
  serve->add_option("--model", sv_model, "Model file")->required();
  serve->add_option("--vocab", sv_vocab, "Vocabulary file")->required();
  serve->add_option("--host", sv_host, "Bind address");
  serve->add_option("--port", sv_port, "Port");
  serve->add_flag("--raw", sv_raw, "Full-precision probabilities");

  // predict
  std::string pr_model, pr_vocab, pr_hex;
  bool pr_raw = false;
  auto* predict = app.add_subcommand("predict", "Print the prediction document for a hex file");
  predict->add_option("hexfile", pr_hex, "File holding hex bytecode")->required();
  predict->add_option("--model", pr_model, "Model file")->required();
  predict->add_option("--vocab", pr_vocab, "Vocabulary file")->required();
  predict->add_flag("--raw", pr_raw, "Full-precision probabilities");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*preprocess) {
      out << evm::render(evm::preprocess(trim(read_text(hex_path)))) << "\n";
    } else if (*synth) {
      auto spec = corpus::SynthSpec::defaults(synth_classes, synth_per_class, synth_clean);
      spec.min_length = synth_min;
      spec.max_length = synth_max;
      spec.extra_label_rate = synth_extra;
      const auto records = corpus::synth_generate(spec, synth_seed);
      corpus::write_chunk({0, records}, spec.catalog, synth_out);
      out << "wrote " << records.size() << " records to " << synth_out << "\n";
    } else if (*label) {
      const auto catalog = corpus::ClassCatalog::defaults().prefix(label_classes);
      const auto profiles = corpus::read_profiles(label_profiles);
      const auto grouped = corpus::read_reports(label_reports);
      std::map<std::string, const std::vector<corpus::DetectorReport>*> by_address;
      for (const auto& [addr, reports] : grouped) by_address[addr] = &reports;

      std::ifstream in(label_bytecodes);
      if (!in) throw Error("cannot open " + label_bytecodes);
      std::string line;
      std::getline(in, line);
      if (trim(line) != "address,bytecode") throw ParseError(label_bytecodes + ":1: header must be 'address,bytecode'", {}, 1);
      std::vector<corpus::ContractRecord> records;
      std::size_t line_no = 1;
      while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
          throw ParseError(label_bytecodes + ":" + std::to_string(line_no) + ": expected 2 columns", {}, line_no);
        }
        corpus::ContractRecord r;
        r.address = line.substr(0, comma);
        try {
          r.normalized = evm::preprocess(line.substr(comma + 1));
        } catch (const ParseError& e) {
          throw ParseError(label_bytecodes + ":" + std::to_string(line_no) + ": " + e.what(), {}, line_no);
        }
        const auto it = by_address.find(r.address);
        if (it == by_address.end()) throw DataError("no detector reports for " + r.address);
        r.labels = corpus::arbitrate_labels(*it->second, profiles, catalog);
        records.push_back(std::move(r));
      }
      corpus::write_chunk({0, records}, catalog, label_out);
      out << "labeled " << records.size() << " contracts into " << label_out << "\n";
    } else if (*chunk) {
      auto file = corpus::read_chunk(chunk_in);
      auto records = std::move(file.chunk.records);
      if (per_class_min || clean_count) {
        records = corpus::build_balanced(records, per_class_min.value_or(0), clean_count.value_or(0),
                                         chunk_seed);
      }
      auto parts = corpus::split(std::move(records), chunk_seed);
      fs::create_directories(chunk_dir);
      const auto chunks = corpus::chunk(std::move(parts.train), chunk_size, mix_seed(chunk_seed, 1));
      for (const auto& c : chunks) {
        corpus::write_chunk(c, file.catalog, (fs::path(chunk_dir) / chunk_file_name(c.index)).string());
      }
      corpus::write_chunk({0, parts.validation}, file.catalog, (fs::path(chunk_dir) / "validation.csv").string());
      corpus::write_chunk({0, parts.test}, file.catalog, (fs::path(chunk_dir) / "test.csv").string());
      out << "chunks: " << chunks.size() << ", validation: " << parts.validation.size()
          << ", test: " << parts.test.size() << "\n";
    } else if (*train) {
      const auto files = read_chunk_dir(train_data);
      const auto& catalog = files.front().catalog;
      std::vector<corpus::ContractRecord> all;
      for (const auto& f : files) {
        if (!(f.catalog == catalog)) throw ConfigError("chunk files disagree on class columns");
        all.insert(all.end(), f.chunk.records.begin(), f.chunk.records.end());
      }
      const auto vocab = tokenizer::Vocabulary::fit(all);
      mol::StemConfig stem;
      stem.vocab_size = vocab.size();
      stem.embedding_dim = embedding_dim;
      stem.gru_hidden = hidden;
      stem.dropout_rate = dropout;
      stem.max_sequence_length = max_seq_len;
      std::vector<mol::BranchConfig> branches;
      for (const auto& n : catalog.names()) branches.push_back({n, {128, 64, 1}});
      auto model = mol::init_model(stem, branches, train_flags.seed);
      model.set_vocab_fingerprint(vocab.fingerprint());

      std::vector<trainer::EncodedSet> sets;
      for (const auto& f : files) {
        sets.push_back(trainer::encode_records(f.chunk.records, catalog.names(), vocab, max_seq_len));
      }
      std::optional<trainer::EncodedSet> validation;
      const auto val_path = fs::path(train_data) / "validation.csv";
      if (fs::exists(val_path)) {
        const auto v = corpus::read_chunk(val_path.string());
        validation = trainer::encode_records(v.chunk.records, catalog.names(), vocab, max_seq_len);
      }
      const auto history = trainer::train(model, sets, train_flags.config(),
                                          validation ? &*validation : nullptr);
      mol::save_model(model, train_model);
      tokenizer::save_vocab(vocab, train_vocab);
      if (!train_history.empty()) trainer::write_history(history, train_history);
      print_history_tail(history, out);
    } else if (*transfer) {
      auto model = mol::load_model(tl_model);
      const auto vocab = tokenizer::load_vocab(tl_vocab);
      if (model.vocab_fingerprint() != vocab.fingerprint()) {
        throw ConfigError("vocabulary does not match the model");
      }
      const auto files = read_chunk_dir(tl_data);
      const auto& catalog = files.front().catalog;
      const std::size_t max_len = model.stem().max_sequence_length;
      std::vector<trainer::EncodedSet> sets;
      for (const auto& f : files) {
        if (!(f.catalog == catalog)) throw ConfigError("chunk files disagree on class columns");
        sets.push_back(trainer::encode_records(f.chunk.records, catalog.names(), vocab, max_len));
      }
      std::optional<trainer::EncodedSet> validation;
      const auto val_path = fs::path(tl_data) / "validation.csv";
      if (fs::exists(val_path)) {
        const auto v = corpus::read_chunk(val_path.string());
        validation = trainer::encode_records(v.chunk.records, catalog.names(), vocab, max_len);
      }
      std::vector<mol::BranchConfig> branches;
      for (const auto& n : catalog.names()) branches.push_back({n, {128, 64, 1}});
      const auto history = trainer::transfer_train(model, sets, branches, tl_flags.config(),
                                                   validation ? &*validation : nullptr);
      mol::save_model(model, tl_out);
      if (!tl_history.empty()) trainer::write_history(history, tl_history);
      print_history_tail(history, out);
    } else if (*eval) {
      const auto model = mol::load_model(ev_model);
      const auto vocab = tokenizer::load_vocab(ev_vocab);
      if (model.vocab_fingerprint() != vocab.fingerprint()) {
        throw ConfigError("vocabulary does not match the model");
      }
      const auto data = corpus::read_chunk(ev_data);
      const auto set = trainer::encode_records(data.chunk.records, data.catalog.names(), vocab,
                                               model.stem().max_sequence_length);
      const auto report = trainer::evaluate(model, set, ev_threshold);
      if (!ev_report.empty()) metrics::write_report(report, ev_report);
      out << metrics::report_csv(report);
    } else if (*serve) {
      const auto svc = service::PredictionService::load({sv_model, sv_vocab, sv_host, sv_port, {}, sv_raw});
      service::HttpServer server(svc, sv_raw);
      err << "serving on http://" << sv_host << ":" << sv_port << " (GET /config, POST /predict)\n";
      if (!server.listen(sv_host, sv_port)) throw Error("cannot bind " + sv_host + ":" + std::to_string(sv_port));
    } else if (*predict) {
      const auto svc = service::PredictionService::load({pr_model, pr_vocab, {}, 0, {}, pr_raw});
      out << service::format_prediction(svc.predict(trim(read_text(pr_hex))), pr_raw) << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace vulnscan
