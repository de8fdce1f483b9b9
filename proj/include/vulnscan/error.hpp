// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace vulnscan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input: hex strings, CSV rows, vocabulary and table files.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::optional<std::size_t> position = {},
             std::optional<std::size_t> line = {})
      : Error(what), position_(position), line_(line) {}

  std::optional<std::size_t> position() const { return position_; }
  std::optional<std::size_t> line() const { return line_; }

 private:
  std::optional<std::size_t> position_;
  std::optional<std::size_t> line_;
};

// Invalid configuration or arguments (shapes, arities, hyper-parameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The data cannot satisfy a request: uncovered classes, sample shortages,
// out-of-range token ids.
class DataError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward without a matching forward.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Model or vocabulary file that cannot be loaded.
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace vulnscan
