// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vulnscan/corpus.hpp"

namespace vulnscan::metrics {

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t support() const { return tp + fn; }
  bool operator==(const ClassCounts&) const = default;
};

struct ConfusionCounts {
  std::vector<ClassCounts> per_class;
  std::size_t n_samples = 0;

  bool operator==(const ConfusionCounts&) const = default;
};

/// Throws ConfigError when the lists differ in length or any vector's arity
/// differs from the first.
ConfusionCounts confusion(const std::vector<corpus::LabelVector>& y_true,
                          const std::vector<corpus::LabelVector>& y_pred);

// Zero denominators yield 0 throughout.
std::pair<double, double> precision_recall(const ConfusionCounts& counts, std::size_t class_index);
double f1(double precision, double recall);
double class_f1(const ConfusionCounts& counts, std::size_t class_index);

/// Support-weighted mean of per-class F1, support = tp + fn. Throws
/// DataError when every class has zero support.
double weighted_f1(const ConfusionCounts& counts);

/// tp / (tp + fp + fn) for one class.
double jaccard(const ConfusionCounts& counts, std::size_t class_index);
/// Pooled over classes (micro average).
double jaccard_micro(const ConfusionCounts& counts);

double hamming_loss(const std::vector<corpus::LabelVector>& y_true,
                    const std::vector<corpus::LabelVector>& y_pred);
/// Same quantity from accumulated counts.
double hamming_loss(const ConfusionCounts& counts);

struct ClassMetrics {
  std::string name;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double fpr = 0;
  double fnr = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  std::optional<double> weighted_f1;  // absent when no class has positive support
  double jaccard = 0;
  double hamming_loss = 0;
  double mean_bce = 0;
  ConfusionCounts counts;
};

MetricsReport make_report(const ConfusionCounts& counts, const std::vector<std::string>& class_names,
                          double mean_bce);

/// `class,precision,recall,f1,fpr,fnr` rows, then the aggregate row
/// `__all__,<weighted_f1>,<jaccard>,<hamming>,<mean_bce>`.
std::string report_csv(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::string& path);

}  // namespace vulnscan::metrics
