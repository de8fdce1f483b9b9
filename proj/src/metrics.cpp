// Copyright 2026 The vulnscan Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "vulnscan/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "vulnscan/error.hpp"

namespace vulnscan::metrics {
namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void check_shapes(const std::vector<corpus::LabelVector>& y_true,
                  const std::vector<corpus::LabelVector>& y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw ConfigError("label lists differ in length (" + std::to_string(y_true.size()) + " vs " +
                      std::to_string(y_pred.size()) + ")");
  }
  const std::size_t arity = y_true.empty() ? 0 : y_true.front().size();
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i].size() != arity || y_pred[i].size() != arity) {
      throw ConfigError("label arity mismatch at sample " + std::to_string(i));
    }
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

ConfusionCounts confusion(const std::vector<corpus::LabelVector>& y_true,
                          const std::vector<corpus::LabelVector>& y_pred) {
  check_shapes(y_true, y_pred);
  ConfusionCounts counts;
  counts.n_samples = y_true.size();
  counts.per_class.resize(y_true.empty() ? 0 : y_true.front().size());
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    for (std::size_t c = 0; c < counts.per_class.size(); ++c) {
      const bool t = y_true[i][c] != 0;
      const bool p = y_pred[i][c] != 0;
      auto& cc = counts.per_class[c];
      if (t && p) ++cc.tp;
      else if (!t && p) ++cc.fp;
      else if (t && !p) ++cc.fn;
      else ++cc.tn;
    }
  }
  return counts;
}

std::pair<double, double> precision_recall(const ConfusionCounts& counts, std::size_t c) {
  const auto& cc = counts.per_class.at(c);
  return {ratio(cc.tp, cc.tp + cc.fp), ratio(cc.tp, cc.tp + cc.fn)};
}

double f1(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

double class_f1(const ConfusionCounts& counts, std::size_t c) {
  const auto [p, r] = precision_recall(counts, c);
  return f1(p, r);
}

double weighted_f1(const ConfusionCounts& counts) {
  double num = 0.0;
  std::size_t den = 0;
  for (std::size_t c = 0; c < counts.per_class.size(); ++c) {
    const std::size_t support = counts.per_class[c].support();
    num += static_cast<double>(support) * class_f1(counts, c);
    den += support;
  }
  if (den == 0) throw DataError("weighted F1 is undefined: no class has positive support");
  return num / static_cast<double>(den);
}

double jaccard(const ConfusionCounts& counts, std::size_t c) {
  const auto& cc = counts.per_class.at(c);
  return ratio(cc.tp, cc.tp + cc.fp + cc.fn);
}

double jaccard_micro(const ConfusionCounts& counts) {
  std::size_t tp = 0, union_size = 0;
  for (const auto& cc : counts.per_class) {
    tp += cc.tp;
    union_size += cc.tp + cc.fp + cc.fn;
  }
  return ratio(tp, union_size);
}

double hamming_loss(const std::vector<corpus::LabelVector>& y_true,
                    const std::vector<corpus::LabelVector>& y_pred) {
  check_shapes(y_true, y_pred);
  std::size_t wrong = 0, cells = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    for (std::size_t c = 0; c < y_true[i].size(); ++c) {
      wrong += (y_true[i][c] != 0) != (y_pred[i][c] != 0);
      ++cells;
    }
  }
  return ratio(wrong, cells);
}

double hamming_loss(const ConfusionCounts& counts) {
  std::size_t wrong = 0;
  for (const auto& cc : counts.per_class) wrong += cc.fp + cc.fn;
  return ratio(wrong, counts.n_samples * counts.per_class.size());
}

MetricsReport make_report(const ConfusionCounts& counts, const std::vector<std::string>& names,
                          double mean_bce) {
  if (names.size() != counts.per_class.size()) throw ConfigError("class name count mismatch");
  MetricsReport report;
  report.counts = counts;
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto& cc = counts.per_class[c];
    const auto [p, r] = precision_recall(counts, c);
    report.per_class.push_back({names[c], p, r, f1(p, r), ratio(cc.fp, cc.fp + cc.tn),
                                ratio(cc.fn, cc.fn + cc.tp)});
  }
  try {
    report.weighted_f1 = weighted_f1(counts);
  } catch (const DataError&) {
    report.weighted_f1.reset();
  }
  report.jaccard = jaccard_micro(counts);
  report.hamming_loss = hamming_loss(counts);
  report.mean_bce = mean_bce;
  return report;
}

std::string report_csv(const MetricsReport& report) {
  std::string out = "class,precision,recall,f1,fpr,fnr\n";
  for (const auto& c : report.per_class) {
    out += c.name + ',' + fmt(c.precision) + ',' + fmt(c.recall) + ',' + fmt(c.f1) + ',' +
           fmt(c.fpr) + ',' + fmt(c.fnr) + '\n';
  }
  out += "__all__," + (report.weighted_f1 ? fmt(*report.weighted_f1) : std::string("nan")) + ',' +
         fmt(report.jaccard) + ',' + fmt(report.hamming_loss) + ',' + fmt(report.mean_bce) + '\n';
  return out;
}

void write_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << report_csv(report);
}

}  // namespace vulnscan::metrics
