// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "vulnscan/service.hpp"

#include <bit>
#include <chrono>
#include <cstdio>

#include <httplib.h>
#include <json.hpp>

#include "vulnscan/error.hpp"
#include "vulnscan/evm_bytecode.hpp"

namespace vulnscan::service {
namespace {

using json = nlohmann::json;

std::string error_body(const std::string& message) { return json{{"error", message}}.dump(); }

}  // namespace

std::string model_fingerprint(const mol::MolModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& b : model.blocks()) {
    for (unsigned char c : b.name) mix(c);
    for (auto d : b.value.shape) mix(d);
    for (float v : b.value.data) mix(std::bit_cast<std::uint32_t>(v));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_prediction(const Prediction& prediction, bool raw) {
  std::string out = "{\"prediction\": {";
  char buf[64];
  for (std::size_t k = 0; k < prediction.class_names.size(); ++k) {
    if (k) out += ", ";
    out += json(prediction.class_names[k]).dump();
    out += ": ";
    std::snprintf(buf, sizeof buf, raw ? "%.9g" : "%.4f",
                  static_cast<double>(prediction.probabilities[k]));
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%.6f", prediction.seconds);
  out += "}, \"prediction_time in_second\": \"";
  out += buf;
  out += "\"}";
  return out;
}

PredictionService::PredictionService(mol::MolModel model, tokenizer::Vocabulary vocab,
                                     std::optional<corpus::ClassCatalog> catalog)
    : model_(std::move(model)), vocab_(std::move(vocab)) {
  if (model_.vocab_fingerprint() != vocab_.fingerprint()) {
    throw ConfigError("model was trained with vocabulary " + model_.vocab_fingerprint() +
                      " but the loaded vocabulary is " + vocab_.fingerprint());
  }
  if (vocab_.size() > model_.stem().vocab_size) {
    throw ConfigError("vocabulary has more ids than the model's embedding rows");
  }
  if (catalog && catalog->names() != model_.class_names()) {
    throw ConfigError("model class order does not match the configured catalog");
  }
  fingerprint_ = model_fingerprint(model_);
}

PredictionService PredictionService::load(const ServiceConfig& config) {
  return PredictionService(mol::load_model(config.model_path),
                           tokenizer::load_vocab(config.vocab_path), config.catalog);
}

Prediction PredictionService::predict(std::string_view hex) const {
  const auto start = std::chrono::steady_clock::now();
  const auto seq = evm::preprocess(hex);
  const std::vector<tokenizer::TokenSequence> batch{
      tokenizer::encode(seq, vocab_, model_.stem().max_sequence_length)};
  const auto probs = mol::forward(model_, std::span<const tokenizer::TokenSequence>(batch),
                                  mol::Mode::kEval, 0);
  Prediction p;
  p.class_names = model_.class_names();
  p.probabilities = probs.data;
  p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return p;
}

std::string PredictionService::config_document() const {
  json doc;
  doc["classes"] = model_.class_names();
  doc["max_sequence_length"] = model_.stem().max_sequence_length;
  doc["model_fingerprint"] = fingerprint_;
  doc["vocab_fingerprint"] = vocab_.fingerprint();
  doc["vocab_size"] = vocab_.size();
  return doc.dump();
}

HttpResult PredictionService::handle_config() const {
  ++requests_;
  return {200, config_document()};
}

HttpResult PredictionService::handle_predict(std::string_view body, bool raw) const {
  ++requests_;
  const auto start = std::chrono::steady_clock::now();
  json request;
  try {
    request = json::parse(body);
  } catch (const json::exception&) {
    return {400, error_body("request body is not valid JSON")};
  }
  if (!request.is_object() || !request.contains("smart_contract")) {
    return {400, error_body("request must be an object with a 'smart_contract' field")};
  }
  if (request.size() != 1) {
    return {400, error_body("request must contain only the 'smart_contract' field")};
  }
  if (!request["smart_contract"].is_string()) {
    return {400, error_body("'smart_contract' must be a hex string")};
  }
  try {
    auto prediction = predict(request["smart_contract"].get<std::string>());
    prediction.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {200, format_prediction(prediction, raw)};
  } catch (const ParseError& e) {
    return {400, error_body(std::string("malformed bytecode: ") + e.what())};
  } catch (const std::exception& e) {
    return {500, error_body(std::string("internal error: ") + e.what())};
  }
}

HttpServer::HttpServer(const PredictionService& service, bool raw)
    : server_(std::make_unique<httplib::Server>()) {
  server_->Get("/config", [&service](const httplib::Request&, httplib::Response& res) {
    const auto r = service.handle_config();
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  server_->Post("/predict", [&service, raw](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.handle_predict(req.body, raw);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

int HttpServer::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool HttpServer::listen_after_bind() { return server_->listen_after_bind(); }

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

void HttpServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace vulnscan::service
