#include "madmil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "madmil/error.hpp"

namespace madmil {

std::size_t ScoredPrediction::predicted() const {
  if (scores.empty()) throw DimensionError("prediction '" + bag_id + "' has no class scores");
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

double rank_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw DimensionError("rank_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Doubled midranks keep the arithmetic in integers.
  std::vector<std::size_t> rank2(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = i + j + 1;  // 2·mean(i+1..j)
    i = j;
  }
  std::size_t n_pos = 0;
  std::size_t rank2_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) {
      ++n_pos;
      rank2_pos += rank2[i];
    }
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw NumericalError("AUC is undefined when only one class is present");
  }
  const double u2 = static_cast<double>(rank2_pos - n_pos * (n_pos + 1));
  return u2 / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double roc_auc(std::span<const ScoredPrediction> predictions) {
  if (predictions.empty()) throw NumericalError("AUC of an empty prediction set");
  const std::size_t C = predictions.front().scores.size();
  if (C < 2) throw DimensionError("AUC needs at least two class scores");
  std::vector<bool> present(C, false);
  for (const auto& p : predictions) {
    if (p.scores.size() != C) throw DimensionError("AUC: predictions have differing class counts");
    if (p.label >= C) throw DimensionError("AUC: label out of range");
    present[p.label] = true;
  }
  const auto classes_present = std::count(present.begin(), present.end(), true);
  if (classes_present < 2) throw NumericalError("AUC is undefined when only one class is present");

  std::vector<double> scores(predictions.size());
  std::vector<std::uint8_t> positive(predictions.size());
  const auto one_vs_rest = [&](std::size_t cls) {
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      scores[i] = predictions[i].scores[cls];
      positive[i] = predictions[i].label == cls;
    }
    return rank_auc(scores, positive);
  };
  if (C == 2) return one_vs_rest(1);
  double total = 0.0;
  for (std::size_t cls = 0; cls < C; ++cls)
    if (present[cls]) total += one_vs_rest(cls);
  return total / static_cast<double>(classes_present);
}

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

double f1_from(const Counts& c) {
  const double precision_den = static_cast<double>(c.tp + c.fp);
  const double recall_den = static_cast<double>(c.tp + c.fn);
  const double p = precision_den > 0 ? static_cast<double>(c.tp) / precision_den : 0.0;
  const double r = recall_den > 0 ? static_cast<double>(c.tp) / recall_den : 0.0;
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

Counts count_class(std::span<const ScoredPrediction> predictions, std::size_t cls) {
  Counts c;
  for (const auto& p : predictions) {
    const std::size_t guess = p.predicted();
    if (guess == cls && p.label == cls) ++c.tp;
    else if (guess == cls) ++c.fp;
    else if (p.label == cls) ++c.fn;
  }
  return c;
}

}  // namespace

double macro_f1(std::span<const ScoredPrediction> predictions) {
  if (predictions.empty()) throw NumericalError("F1 of an empty prediction set");
  const std::size_t C = predictions.front().scores.size();
  double total = 0.0;
  for (std::size_t cls = 0; cls < C; ++cls) total += f1_from(count_class(predictions, cls));
  return total / static_cast<double>(C);
}

double class_f1(std::span<const ScoredPrediction> predictions, std::size_t positive_class) {
  if (predictions.empty()) throw NumericalError("F1 of an empty prediction set");
  return f1_from(count_class(predictions, positive_class));
}

double accuracy(std::span<const ScoredPrediction> predictions) {
  if (predictions.empty()) throw NumericalError("accuracy of an empty prediction set");
  const auto hits = std::count_if(predictions.begin(), predictions.end(),
                                  [](const ScoredPrediction& p) { return p.predicted() == p.label; });
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw NumericalError("cannot aggregate an empty set of values");
  const double n = static_cast<double>(values.size());
  MeanStd out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

std::string format_mean_std(const MeanStd& m, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", decimals, m.mean, decimals, m.std);
  return buf;
}

}  // namespace madmil
