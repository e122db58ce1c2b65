#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmerc/common.hpp"

namespace mmerc {

struct MetricsReport {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::size_t total = 0;
};

// Accuracy, per-class F1 and the class-frequency-weighted F1
// sum_k freq_k * F1_k, with freq_k the gold-label share of class k. Classes
// absent from the gold labels carry zero weight.
inline MetricsReport evaluate_predictions(const std::vector<int>& gold,
                                          const std::vector<int>& pred,
                                          std::size_t num_classes) {
  require(gold.size() == pred.size(),
          detail::msg("evaluate_predictions: ", gold.size(), " labels vs ",
                      pred.size(), " predictions"));
  MetricsReport r;
  r.total = gold.size();
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  r.per_class_f1.assign(num_classes, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    require(gold[i] >= 0 && static_cast<std::size_t>(gold[i]) < num_classes,
            detail::msg("evaluate_predictions: gold label ", gold[i],
                        " at index ", i, " out of range"));
    require(pred[i] >= 0 && static_cast<std::size_t>(pred[i]) < num_classes,
            detail::msg("evaluate_predictions: prediction ", pred[i],
                        " at index ", i, " out of range"));
    r.confusion[static_cast<std::size_t>(gold[i])]
               [static_cast<std::size_t>(pred[i])] += 1;
    correct += gold[i] == pred[i];
  }
  if (r.total == 0) return r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::size_t tp = r.confusion[k][k], fn = 0, fp = 0;
    for (std::size_t j = 0; j < num_classes; ++j) {
      if (j == k) continue;
      fn += r.confusion[k][j];
      fp += r.confusion[j][k];
    }
    const double prec =
        tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec =
        tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    r.per_class_f1[k] =
        prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    const double freq =
        static_cast<double>(tp + fn) / static_cast<double>(r.total);
    r.weighted_f1 += freq * r.per_class_f1[k];
  }
  return r;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  return nlohmann::json{{"accuracy", r.accuracy},
                        {"weighted_f1", r.weighted_f1},
                        {"per_class_f1", r.per_class_f1},
                        {"confusion", r.confusion}};
}

// CSV with a header row of label names; row k lists how utterances of gold
// class k were predicted.
inline void write_confusion_csv(const MetricsReport& r,
                                const std::vector<std::string>& label_names,
                                const std::string& path) {
  require(label_names.size() == r.confusion.size(),
          detail::msg("write_confusion_csv: ", label_names.size(),
                      " names for ", r.confusion.size(), " classes"));
  std::ofstream out(path, std::ios::binary);
  require(out.good(), detail::msg("cannot open '", path, "' for writing"));
  for (std::size_t k = 0; k < label_names.size(); ++k)
    out << (k ? "," : "") << label_names[k];
  out << "\n";
  for (const auto& row : r.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j)
      out << (j ? "," : "") << row[j];
    out << "\n";
  }
  require(out.good(), detail::msg("write to '", path, "' failed"));
}

}  // namespace mmerc
