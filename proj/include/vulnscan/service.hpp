// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vulnscan/corpus.hpp"
#include "vulnscan/mol_net.hpp"
#include "vulnscan/tokenizer.hpp"

namespace httplib {
class Server;
}

namespace vulnscan::service {

struct ServiceConfig {
  std::string model_path;
  std::string vocab_path;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<corpus::ClassCatalog> catalog;
  bool raw = false;  // full-precision probabilities instead of 4 decimals
};

struct Prediction {
  std::vector<std::string> class_names;
  std::vector<float> probabilities;
  double seconds = 0;
};

struct HttpResult {
  int status = 200;
  std::string body;
};

/// FNV-1a over block names, shapes and parameter bits.
std::string model_fingerprint(const mol::MolModel& model);

/// `{"prediction": {"<class>": 0.1234, ...}, "prediction_time in_second": "<s>"}`
/// with classes in branch order. `raw` prints probabilities with 9
/// significant digits instead of 4 decimal places.
std::string format_prediction(const Prediction& prediction, bool raw = false);

/// Immutable model + vocabulary behind the /config and /predict endpoints.
class PredictionService {
 public:
  /// Throws ConfigError when the model's vocabulary fingerprint differs from
  /// `vocab`, or its class order differs from `catalog`.
  PredictionService(mol::MolModel model, tokenizer::Vocabulary vocab,
                    std::optional<corpus::ClassCatalog> catalog = {});

  static PredictionService load(const ServiceConfig& config);

  const mol::MolModel& model() const { return model_; }
  const tokenizer::Vocabulary& vocabulary() const { return vocab_; }

  /// Same preprocessing as corpus construction, then eval-mode forward.
  /// Throws ParseError on malformed hex.
  Prediction predict(std::string_view hex) const;

  std::string config_document() const;

  HttpResult handle_config() const;
  HttpResult handle_predict(std::string_view body, bool raw = false) const;

  std::uint64_t requests_served() const { return requests_.load(); }

 private:
  mol::MolModel model_;
  tokenizer::Vocabulary vocab_;
  std::string fingerprint_;
  mutable std::atomic<std::uint64_t> requests_{0};
};

/// HTTP/1.1 front end: GET /config, POST /predict.
class HttpServer {
 public:
  HttpServer(const PredictionService& service, bool raw = false);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and serves until stop(). Returns false when binding fails.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port and returns it (or -1); call listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

 private:
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace vulnscan::service
