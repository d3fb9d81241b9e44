#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "madmil/bags.hpp"
#include "madmil/metrics.hpp"
#include "madmil/models.hpp"

namespace madmil {

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool shuffle = true;

  void validate() const;
};

/// Adam with classic (coupled) L2 weight decay: g ← g + wd·θ before the moment
/// updates.
class Adam {
 public:
  Adam(const TrainConfig& config, const ModelParams& shape_of);

  /// One update of every tensor of `params` with matching `grads`.
  void step(ModelParams& params, std::span<const Tensor* const> grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TestMetrics {
  double auc = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

struct RunResult {
  ModelParams best_params;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
  TestMetrics test_metrics;
};

/// Batch-size-1 Adam over `train_bags`, shuffled each epoch with `seed`'s
/// stream; parameters initialized from `seed`. Keeps the parameters of the
/// epoch with the lowest mean validation loss (earliest on ties).
/// Throws NumericalError naming epoch and bag on a non-finite loss.
RunResult train(const TrainConfig& config, const ModelConfig& model, const BagSet& train_bags,
                const BagSet& val_bags, std::uint64_t seed);

/// Same as above but starting from given parameters.
RunResult train_from(const TrainConfig& config, const ModelConfig& model, ModelParams start,
                     const BagSet& train_bags, const BagSet& val_bags, std::uint64_t seed);

/// Softmax class scores for every bag.
std::vector<ScoredPrediction> predict(const ModelConfig& model, const ModelParams& params,
                                      const BagSet& bags);

double mean_loss(const ModelConfig& model, const ModelParams& params, const BagSet& bags);

/// AUC (macro one-vs-rest for C > 2), macro F1 and accuracy.
TestMetrics evaluate(const ModelConfig& model, const ModelParams& params, const BagSet& bags);

// ---------------------------------------------------------------------------
// Sweeps

/// Everything one seed needs: its own train/val/test sets.
struct SeedData {
  BagSet train;
  BagSet val;
  BagSet test;
};

/// Produces the data for a seed. Called once per seed.
using DataSource = std::function<SeedData(std::uint64_t seed)>;

struct SeedRun {
  std::uint64_t seed = 0;
  RunResult result;
};

struct SeedSweep {
  std::vector<SeedRun> runs;
  MeanStd auc, f1, accuracy, best_val_loss;
};

/// Runs seeds first_seed..first_seed+n_seeds−1 (up to `jobs` at once);
/// results are ordered by seed regardless of scheduling.
SeedSweep sweep_seeds(const TrainConfig& config, const ModelConfig& model,
                      const DataSource& data, std::size_t n_seeds, std::size_t jobs = 1,
                      std::uint64_t first_seed = 0);

struct HeadSweepEntry {
  std::size_t heads = 0;
  TrainConfig training;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  SeedSweep sweep;
};

struct HeadSweep {
  std::vector<HeadSweepEntry> entries;
  std::size_t selected_heads = 0;
};

/// Picks the optimizer settings for one candidate model (e.g. a grid search).
using Tuner = std::function<TrainConfig(const ModelConfig&)>;

/// One seed sweep per head count; selects the M with the lowest mean best
/// validation loss (ties: smallest M). Without a tuner every M uses `config`.
HeadSweep sweep_heads(const TrainConfig& config, const ModelConfig& base,
                      std::span<const std::size_t> head_counts, const DataSource& data,
                      std::size_t n_seeds, std::size_t jobs = 1, std::size_t flop_instances = 120,
                      std::uint64_t first_seed = 0, const Tuner& tuner = {});

struct GridEntry {
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  double best_val_loss = 0.0;
};

struct GridSearch {
  std::vector<GridEntry> table;  // declared order: lr outer, wd inner
  double learning_rate = 0.0;
  double weight_decay = 0.0;
};

/// Exhaustive lr × wd search on one seed's data; picks the lowest best
/// validation loss, ties resolved by declared order.
GridSearch grid_search(const TrainConfig& base, const ModelConfig& model,
                       std::span<const double> lr_grid, std::span<const double> wd_grid,
                       const SeedData& data, std::uint64_t seed, std::size_t jobs = 1);

}  // namespace madmil
