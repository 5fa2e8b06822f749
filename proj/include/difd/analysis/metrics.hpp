#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "difd/corpus/instance.hpp"
#include "difd/error.hpp"

namespace difd::analysis {

using corpus::kNumPolarities;
using corpus::Polarity;

struct MetricReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kNumPolarities> precision{};
  std::array<double, kNumPolarities> recall{};
  std::array<double, kNumPolarities> f1{};
  /// confusion[gold][predicted]
  std::array<std::array<std::size_t, kNumPolarities>, kNumPolarities> confusion{};
  std::size_t count = 0;
};

/// Per-class scores with 0 wherever a denominator is 0.
inline MetricReport metric_report(const std::vector<Polarity>& gold, const std::vector<Polarity>& predicted) {
  if (gold.size() != predicted.size()) fail(ErrorKind::shape, "metric_report: gold and predicted differ in length");
  if (gold.empty()) fail(ErrorKind::data, "metric_report: no instances");
  MetricReport r;
  r.count = gold.size();
  for (std::size_t i = 0; i < gold.size(); ++i) ++r.confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(predicted[i])];
  std::size_t correct = 0;
  for (std::size_t c = 0; c < kNumPolarities; ++c) {
    correct += r.confusion[c][c];
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < kNumPolarities; ++k) {
      row += r.confusion[c][k];
      col += r.confusion[k][c];
    }
    const double tp = static_cast<double>(r.confusion[c][c]);
    r.precision[c] = col ? tp / static_cast<double>(col) : 0.0;
    r.recall[c] = row ? tp / static_cast<double>(row) : 0.0;
    const double denom = r.precision[c] + r.recall[c];
    r.f1[c] = denom > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / denom : 0.0;
    r.macro_f1 += r.f1[c] / static_cast<double>(kNumPolarities);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  for (std::size_t c = 0; c < kNumPolarities; ++c) {
    const std::string name(corpus::to_string(static_cast<Polarity>(c)));
    j["per_class"][name] = {{"precision", r.precision[c]}, {"recall", r.recall[c]}, {"f1", r.f1[c]}};
  }
  j["confusion"] = r.confusion;
  return j;
}

}  // namespace difd::analysis
