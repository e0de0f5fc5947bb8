#include <stdexcept>
#include <string>

#include "clmlf/training.hpp"

namespace clmlf {

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

Metrics metrics_from_confusion(const std::vector<std::vector<long>>& confusion) {
  const std::size_t K = confusion.size();
  for (const auto& row : confusion) {
    if (row.size() != K) throw std::invalid_argument("confusion matrix must be square");
  }
  Metrics m;
  m.confusion = confusion;
  m.per_class.resize(K);
  long total = 0, correct = 0;
  std::vector<long> predicted(K, 0);
  for (std::size_t g = 0; g < K; ++g) {
    for (std::size_t p = 0; p < K; ++p) {
      total += confusion[g][p];
      predicted[p] += confusion[g][p];
      m.per_class[g].support += confusion[g][p];
    }
    correct += confusion[g][g];
  }
  m.accuracy = ratio(static_cast<double>(correct), static_cast<double>(total));
  for (std::size_t c = 0; c < K; ++c) {
    ClassMetrics& cm = m.per_class[c];
    const double tp = static_cast<double>(confusion[c][c]);
    cm.precision = ratio(tp, static_cast<double>(predicted[c]));
    cm.recall = ratio(tp, static_cast<double>(cm.support));
    cm.f1 = ratio(2.0 * cm.precision * cm.recall, cm.precision + cm.recall);
    m.macro_f1 += cm.f1;
    m.weighted_f1 += cm.f1 * static_cast<double>(cm.support);
  }
  m.macro_f1 = K > 0 ? m.macro_f1 / static_cast<double>(K) : 0.0;
  m.weighted_f1 = ratio(m.weighted_f1, static_cast<double>(total));
  return m;
}

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& gold, int num_classes) {
  if (predictions.size() != gold.size()) throw std::invalid_argument("compute_metrics: length mismatch");
  if (num_classes < 1) throw std::invalid_argument("compute_metrics: num_classes must be positive");
  std::vector<std::vector<long>> confusion(static_cast<std::size_t>(num_classes),
                                           std::vector<long>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const int g = gold[i], p = predictions[i];
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes) {
      throw std::out_of_range("compute_metrics: label outside [0, " + std::to_string(num_classes) + ")");
    }
    ++confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
  }
  return metrics_from_confusion(confusion);
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : m.per_class) {
    per_class.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  }
  return {{"accuracy", m.accuracy},
          {"weighted_f1", m.weighted_f1},
          {"macro_f1", m.macro_f1},
          {"per_class", per_class},
          {"confusion", m.confusion}};
}

}  // namespace clmlf
