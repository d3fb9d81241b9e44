#include "madmil/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "madmil/accounting.hpp"
#include "madmil/error.hpp"
#include "madmil/parallel.hpp"
#include "madmil/rng.hpp"

namespace madmil {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5eed;

std::vector<double> softmax(const Tensor& logits) {
  double peak = logits[0];
  for (std::size_t c = 1; c < logits.size(); ++c) peak = std::max(peak, logits[c]);
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) total += p[c] = std::exp(logits[c] - peak);
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("training.lr must be a finite non-negative number");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("training.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
}

Adam::Adam(const TrainConfig& config, const ModelParams& shape_of)
    : lr_(config.learning_rate),
      wd_(config.weight_decay),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon) {
  for (const Tensor* t : shape_of.tensors()) {
    m_.emplace_back(t->rows(), t->cols());
    v_.emplace_back(t->rows(), t->cols());
  }
}

void Adam::step(ModelParams& params, std::span<const Tensor* const> grads) {
  const auto tensors = params.tensors();
  if (tensors.size() != grads.size() || tensors.size() != m_.size()) {
    throw DimensionError("Adam: expected " + std::to_string(m_.size()) + " gradient tensors, got " +
                         std::to_string(grads.size()));
  }
  ++t_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Tensor& theta = *tensors[k];
    const Tensor& g = *grads[k];
    if (!g.same_shape(theta)) {
      throw DimensionError("Adam: gradient " + g.shape_string() + " for parameter " +
                           theta.shape_string());
    }
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double grad = g[i] + wd_ * theta[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad * grad;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      theta[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

RunResult train(const TrainConfig& config, const ModelConfig& model, const BagSet& train_bags,
                const BagSet& val_bags, std::uint64_t seed) {
  return train_from(config, model, init_params(model, seed), train_bags, val_bags, seed);
}

RunResult train_from(const TrainConfig& config, const ModelConfig& model, ModelParams start,
                     const BagSet& train_bags, const BagSet& val_bags, std::uint64_t seed) {
  config.validate();
  check_params(model, start);
  validate_bag_set(train_bags, model.classes);
  validate_bag_set(val_bags, model.classes);
  if (train_bags.front().X.cols() != model.input_dim || val_bags.front().X.cols() != model.input_dim) {
    throw DimensionError("bags have " + std::to_string(train_bags.front().X.cols()) +
                         " features per instance, model.input_dim is " +
                         std::to_string(model.input_dim));
  }

  ModelParams params = std::move(start);
  Adam optimizer(config, params);
  Rng rng(seed, kShuffleStream);
  std::vector<std::size_t> order(train_bags.size());
  std::iota(order.begin(), order.end(), 0);

  RunResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t idx : order) {
      const Bag& bag = train_bags[idx];
      ad::Tape tape;
      const BoundModel bound = bind(tape, params, true);
      const ForwardPass pass = forward(model, bound, tape.constant(bag.X));
      const ad::Var loss = ad::cross_entropy(pass.logits, bag.label);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) +
                             ", bag '" + bag.bag_id + "'");
      }
      tape.backward(loss);
      std::vector<const Tensor*> grads;
      for (const ad::Var& leaf : bound.leaves()) grads.push_back(&tape.grad(leaf));
      optimizer.step(params, grads);
      total += value;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = total / static_cast<double>(train_bags.size());
    record.val_loss = mean_loss(model, params, val_bags);
    if (!std::isfinite(record.val_loss)) {
      throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(record);
    if (record.val_loss < result.best_val_loss) {
      result.best_val_loss = record.val_loss;
      result.best_epoch = epoch;
      result.best_params = params;
    }
  }
  return result;
}

namespace {

// Bags evaluated per tape; the bound weights (and their transposes) are
// shared across a chunk.
constexpr std::size_t kEvalChunk = 32;

template <typename Visit>
void forward_all(const ModelConfig& model, const ModelParams& params, const BagSet& bags,
                 Visit&& visit) {
  for (std::size_t start = 0; start < bags.size(); start += kEvalChunk) {
    ad::Tape tape;
    const BoundModel bound = bind(tape, params, false);
    for (std::size_t i = start; i < std::min(bags.size(), start + kEvalChunk); ++i)
      visit(bags[i], forward(model, bound, tape.constant(bags[i].X)).logits);
  }
}

}  // namespace

std::vector<ScoredPrediction> predict(const ModelConfig& model, const ModelParams& params,
                                      const BagSet& bags) {
  std::vector<ScoredPrediction> out;
  out.reserve(bags.size());
  forward_all(model, params, bags, [&](const Bag& bag, ad::Var logits) {
    out.push_back({bag.bag_id, bag.label, softmax(logits.value())});
  });
  return out;
}

double mean_loss(const ModelConfig& model, const ModelParams& params, const BagSet& bags) {
  if (bags.empty()) throw ConfigError("mean_loss: empty bag set");
  double total = 0.0;
  forward_all(model, params, bags, [&](const Bag& bag, ad::Var logits) {
    total += ad::cross_entropy(logits, bag.label).value()[0];
  });
  return total / static_cast<double>(bags.size());
}

TestMetrics evaluate(const ModelConfig& model, const ModelParams& params, const BagSet& bags) {
  const auto predictions = predict(model, params, bags);
  return {roc_auc(predictions), macro_f1(predictions), accuracy(predictions)};
}

SeedSweep sweep_seeds(const TrainConfig& config, const ModelConfig& model, const DataSource& data,
                      std::size_t n_seeds, std::size_t jobs, std::uint64_t first_seed) {
  if (n_seeds < 1) throw ConfigError("number of seeds must be >= 1");
  SeedSweep sweep;
  sweep.runs.resize(n_seeds);
  parallel_for(n_seeds, jobs, [&](std::size_t i) {
    const std::uint64_t seed = first_seed + i;
    const SeedData seed_data = data(seed);
    SeedRun run;
    run.seed = seed;
    run.result = train(config, model, seed_data.train, seed_data.val, seed);
    if (!seed_data.test.empty()) {
      run.result.test_metrics = evaluate(model, run.result.best_params, seed_data.test);
    }
    sweep.runs[i] = std::move(run);
  });
  std::vector<double> auc, f1, acc, val;
  for (const auto& run : sweep.runs) {
    auc.push_back(run.result.test_metrics.auc);
    f1.push_back(run.result.test_metrics.f1);
    acc.push_back(run.result.test_metrics.accuracy);
    val.push_back(run.result.best_val_loss);
  }
  sweep.auc = mean_std(auc);
  sweep.f1 = mean_std(f1);
  sweep.accuracy = mean_std(acc);
  sweep.best_val_loss = mean_std(val);
  return sweep;
}

HeadSweep sweep_heads(const TrainConfig& config, const ModelConfig& base,
                      std::span<const std::size_t> head_counts, const DataSource& data,
                      std::size_t n_seeds, std::size_t jobs, std::size_t flop_instances,
                      std::uint64_t first_seed, const Tuner& tuner) {
  if (head_counts.empty()) throw ConfigError("head sweep needs at least one head count");
  HeadSweep out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t heads : head_counts) {
    ModelConfig model = base;
    model.aggregator = Aggregator::madmil;
    model.heads = heads;
    HeadSweepEntry entry;
    entry.heads = heads;
    entry.params = param_count(model);
    entry.flops = flops(model, flop_instances);
    entry.training = tuner ? tuner(model) : config;
    entry.sweep = sweep_seeds(entry.training, model, data, n_seeds, jobs, first_seed);
    const double loss = entry.sweep.best_val_loss.mean;
    if (loss < best || (loss == best && heads < out.selected_heads)) {
      best = loss;
      out.selected_heads = heads;
    }
    out.entries.push_back(std::move(entry));
  }
  return out;
}

GridSearch grid_search(const TrainConfig& base, const ModelConfig& model,
                       std::span<const double> lr_grid, std::span<const double> wd_grid,
                       const SeedData& data, std::uint64_t seed, std::size_t jobs) {
  if (lr_grid.empty() || wd_grid.empty()) throw ConfigError("grid search needs nonempty grids");
  GridSearch out;
  for (double lr : lr_grid)
    for (double wd : wd_grid) out.table.push_back({lr, wd, 0.0});
  parallel_for(out.table.size(), jobs, [&](std::size_t i) {
    TrainConfig config = base;
    config.learning_rate = out.table[i].learning_rate;
    config.weight_decay = out.table[i].weight_decay;
    out.table[i].best_val_loss = train(config, model, data.train, data.val, seed).best_val_loss;
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.table.size(); ++i)
    if (out.table[i].best_val_loss < out.table[best].best_val_loss) best = i;
  out.learning_rate = out.table[best].learning_rate;
  out.weight_decay = out.table[best].weight_decay;
  return out;
}

}  // namespace madmil
