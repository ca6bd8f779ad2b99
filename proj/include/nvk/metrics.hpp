// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

namespace nvk {

struct MetricReport {
  std::vector<int> classes;                       // row/column order of the confusion matrix
  std::vector<std::vector<std::size_t>> confusion; // [true][predicted]
  std::size_t total = 0;
  double accuracy = 0;
  double balanced_accuracy = 0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1_per_class;
  std::optional<int> positive_class;
  double f1_binary = 0;  // F1 of positive_class; 0 when none is given
  double f1_macro = 0;

  /// Binary F1 when a positive class is set, macro F1 otherwise.
  double f1() const { return positive_class ? f1_binary : f1_macro; }
};

/// Confusion-matrix metrics over `classes`. Balanced accuracy is the mean
/// recall over all classes; a class with no true samples contributes recall 0
/// and triggers a warning. Precision or F1 with a zero denominator is 0.
MetricReport compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                             const std::vector<int>& classes, std::optional<int> positive_class = std::nullopt);

}  // namespace nvk
