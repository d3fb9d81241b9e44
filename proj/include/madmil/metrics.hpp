#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace madmil {

struct ScoredPrediction {
  std::string bag_id;
  std::size_t label = 0;
  std::vector<double> scores;  // class probabilities

  std::size_t predicted() const;  // argmax, lowest index on ties
};

/// Binary: Mann–Whitney AUC of the class-1 score with midranks for ties.
/// C > 2: macro one-vs-rest over the classes present in the labels.
/// Throws NumericalError if fewer than two classes are present.
double roc_auc(std::span<const ScoredPrediction> predictions);

/// Rank-sum AUC of `scores` where nonzero `positive[i]` marks the positive class.
double rank_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

/// Macro F1 over all C classes (per-class F1 is 0 when P+R = 0).
double macro_f1(std::span<const ScoredPrediction> predictions);
/// F1 of one class treated as positive.
double class_f1(std::span<const ScoredPrediction> predictions, std::size_t positive_class);
double accuracy(std::span<const ScoredPrediction> predictions);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample (n−1), 0 for n = 1
};

MeanStd mean_std(std::span<const double> values);

/// "0.803 ± 0.059"
std::string format_mean_std(const MeanStd& m, int decimals = 3);

}  // namespace madmil
