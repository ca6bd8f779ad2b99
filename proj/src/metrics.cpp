// SPDX-License-Identifier: Apache-2.0
#include "nvk/metrics.hpp"

#include <algorithm>
#include <string>

#include "nvk/error.hpp"
#include "nvk/logging.hpp"

namespace nvk {

MetricReport compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                             const std::vector<int>& classes, std::optional<int> positive_class) {
  if (predictions.size() != labels.size()) {
    throw ContractError("compute_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  if (classes.empty()) throw ContractError("compute_metrics: empty class list");
  const std::size_t C = classes.size();
  auto index_of = [&](int c, const char* what) {
    auto it = std::find(classes.begin(), classes.end(), c);
    if (it == classes.end()) {
      throw ContractError(std::string("compute_metrics: ") + what + " " + std::to_string(c) + " is not in the alphabet");
    }
    return static_cast<std::size_t>(it - classes.begin());
  };

  MetricReport r;
  r.classes = classes;
  r.positive_class = positive_class;
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) ++r.confusion[index_of(labels[i], "label")][index_of(predictions[i], "prediction")];
  r.total = labels.size();

  std::size_t correct = 0;
  r.precision.assign(C, 0.0);
  r.recall.assign(C, 0.0);
  r.f1_per_class.assign(C, 0.0);
  for (std::size_t k = 0; k < C; ++k) {
    correct += r.confusion[k][k];
    std::size_t support = 0, predicted = 0;
    for (std::size_t j = 0; j < C; ++j) {
      support += r.confusion[k][j];
      predicted += r.confusion[j][k];
    }
    const auto tp = static_cast<double>(r.confusion[k][k]);
    if (support == 0) {
      warn("class " + std::to_string(classes[k]) + " has no samples; its recall counts as 0");
    } else {
      r.recall[k] = tp / static_cast<double>(support);
    }
    if (predicted > 0) r.precision[k] = tp / static_cast<double>(predicted);
    const double denom = static_cast<double>(support + predicted);  // 2TP + FP + FN
    if (denom > 0) r.f1_per_class[k] = 2.0 * tp / denom;
  }
  r.accuracy = r.total ? static_cast<double>(correct) / static_cast<double>(r.total) : 0.0;
  double recall_sum = 0, f1_sum = 0;
  for (std::size_t k = 0; k < C; ++k) {
    recall_sum += r.recall[k];
    f1_sum += r.f1_per_class[k];
  }
  r.balanced_accuracy = recall_sum / static_cast<double>(C);
  r.f1_macro = f1_sum / static_cast<double>(C);
  if (positive_class) r.f1_binary = r.f1_per_class[index_of(*positive_class, "positive class")];
  return r;
}

}  // namespace nvk
