#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "madmil/accounting.hpp"
#include "madmil/error.hpp"
#include "madmil/rng.hpp"
#include "madmil/training.hpp"

using namespace madmil;

namespace {

// Positive bags contain a few instances whose first feature is shifted up.
BagSet toy_bags(std::size_t count, std::uint64_t seed, std::size_t dim = 4) {
  Rng rng(seed, 1);
  BagSet bags;
  for (std::size_t b = 0; b < count; ++b) {
    Bag bag;
    bag.bag_id = "toy" + std::to_string(b);
    bag.label = b % 2;
    const std::size_t n = 3 + rng.index(4);
    bag.X = Tensor(n, dim);
    for (double& v : bag.X.values()) v = rng.uniform(0.0, 1.0);
    if (bag.label == 1) bag.X(0, 0) += 2.0;
    for (std::size_t r = 0; r < n; ++r) bag.instance_ids.push_back(std::to_string(r));
    bags.push_back(std::move(bag));
  }
  return bags;
}

ModelConfig toy_model(Aggregator agg = Aggregator::madmil, std::size_t heads = 2) {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.embed_dim = 6;
  cfg.heads = heads;
  cfg.aggregator = agg;
  return cfg;
}

DataSource toy_source() {
  return [](std::uint64_t seed) {
    return SeedData{toy_bags(10, 100 + seed), toy_bags(6, 200 + seed), toy_bags(8, 300 + seed)};
  };
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters and validation loss unchanged") {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 4;
  const ModelConfig model = toy_model();
  const RunResult r = train(cfg, model, toy_bags(6, 1), toy_bags(4, 2), 3);
  CHECK(r.best_params == init_params(model, 3));
  for (const auto& rec : r.history) CHECK(rec.val_loss == r.history.front().val_loss);
  CHECK(r.best_epoch == 1);
}

TEST_CASE("one Adam step moves each coordinate by about lr") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 1;
  const ModelConfig model = toy_model(Aggregator::abmil, 1);
  const BagSet one = toy_bags(1, 5);
  const ModelParams start = init_params(model, 0);

  // the gradient at the start, for the sign pattern
  ad::Tape tape;
  const BoundModel bound = bind(tape, start, true);
  tape.backward(ad::cross_entropy(forward(model, bound, tape.constant(one[0].X)).logits, one[0].label));
  const auto leaves = bound.leaves();

  const RunResult r = train_from(cfg, model, start, one, one, 0);
  const auto before = start.tensors();
  const auto after = r.best_params.tensors();
  std::size_t moved = 0;
  for (std::size_t k = 0; k < before.size(); ++k) {
    const Tensor& g = tape.grad(leaves[k]);
    for (std::size_t i = 0; i < before[k]->size(); ++i) {
      const double delta = (*after[k])[i] - (*before[k])[i];
      if (std::abs(g[i]) > 1e-6) {
        CHECK(std::abs(std::abs(delta) - 1e-3) < 1e-5);
        CHECK((delta < 0) == (g[i] > 0));
        ++moved;
      } else if (g[i] == 0.0) {
        CHECK(delta == 0.0);
      }
    }
  }
  CHECK(moved > 0);
}

TEST_CASE("Adam applies coupled weight decay") {
  ModelConfig model = toy_model(Aggregator::mean_pool, 1);
  ModelParams p = init_params(model, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  Adam adam(cfg, p);
  std::vector<Tensor> zeros;
  for (const Tensor* t : p.tensors()) zeros.emplace_back(t->rows(), t->cols());
  std::vector<const Tensor*> grads;
  for (const Tensor& z : zeros) grads.push_back(&z);
  const ModelParams before = p;
  adam.step(p, grads);
  // gradient is wd·θ alone, so nonzero weights step toward zero by lr
  const double w0 = before.compress_weight[0];
  CHECK(p.compress_weight[0] == doctest::Approx(w0 - 0.1 * (w0 > 0 ? 1 : -1)).epsilon(1e-6));
  CHECK(p.compress_bias == before.compress_bias);
  CHECK(adam.steps() == 1);
  grads.pop_back();
  CHECK_THROWS_AS(adam.step(p, grads), DimensionError);
}

TEST_CASE("training loss decreases on a toy set") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 5;
  const RunResult r = train(cfg, toy_model(), toy_bags(5, 11), toy_bags(4, 12), 0);
  for (std::size_t e = 1; e < r.history.size(); ++e)
    CHECK(r.history[e].train_loss < r.history[e - 1].train_loss);
}

TEST_CASE("best epoch is the minimum of the recorded validation loss") {
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.epochs = 15;
  const RunResult r = train(cfg, toy_model(), toy_bags(10, 1), toy_bags(6, 2), 4);
  const auto best = std::min_element(r.history.begin(), r.history.end(),
                                     [](const auto& a, const auto& b) { return a.val_loss < b.val_loss; });
  CHECK(r.best_val_loss == best->val_loss);
  CHECK(r.best_epoch == best->epoch);
  CHECK(mean_loss(toy_model(), r.best_params, toy_bags(6, 2)) == r.best_val_loss);
}

TEST_CASE("training is deterministic per seed") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 3;
  const auto a = train(cfg, toy_model(), toy_bags(8, 1), toy_bags(4, 2), 9);
  const auto b = train(cfg, toy_model(), toy_bags(8, 1), toy_bags(4, 2), 9);
  const auto c = train(cfg, toy_model(), toy_bags(8, 1), toy_bags(4, 2), 10);
  CHECK(a.best_params == b.best_params);
  CHECK(a.history.back().train_loss == b.history.back().train_loss);
  CHECK_FALSE(a.best_params == c.best_params);
}

TEST_CASE("bag-order shuffle is a permutation") {
  Rng rng(3, 0x5eed);
  std::vector<std::size_t> order{0, 1, 2, 3, 4, 5, 6, 7};
  for (int epoch = 0; epoch < 20; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  }
}

TEST_CASE("training rejects bad inputs") {
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(cfg, toy_model(), {}, toy_bags(2, 1), 0), ConfigError);
  CHECK_THROWS_AS(train(cfg, toy_model(), toy_bags(2, 1, 5), toy_bags(2, 1, 5), 0), DimensionError);
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(cfg, toy_model(), toy_bags(2, 1), toy_bags(2, 1), 0), ConfigError);
}

TEST_CASE("divergence is reported with epoch and bag") {
  TrainConfig cfg;
  cfg.epochs = 1;
  BagSet bags = toy_bags(2, 1);
  bags[1].X(0, 0) = std::nan("");
  try {
    train(cfg, toy_model(), bags, toy_bags(2, 2), 0);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("toy1") != std::string::npos);
  }
}

TEST_CASE("seed sweep aggregates per-seed metrics") {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 2;
  const SeedSweep serial = sweep_seeds(cfg, toy_model(), toy_source(), 3, 1);
  const SeedSweep parallel = sweep_seeds(cfg, toy_model(), toy_source(), 3, 3);
  REQUIRE(serial.runs.size() == 3);
  std::vector<double> auc;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(serial.runs[i].seed == i);
    CHECK(serial.runs[i].result.best_params == parallel.runs[i].result.best_params);
    auc.push_back(serial.runs[i].result.test_metrics.auc);
  }
  CHECK(serial.auc.mean == mean_std(auc).mean);
  CHECK(serial.auc.std == mean_std(auc).std);

  const SeedSweep one = sweep_seeds(cfg, toy_model(), toy_source(), 1, 1, 2);
  CHECK(one.runs[0].seed == 2);
  CHECK(one.auc.std == 0.0);
  CHECK(one.runs[0].result.best_params == serial.runs[2].result.best_params);
}

TEST_CASE("head sweep selects the lowest validation loss") {
  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.epochs = 3;
  const std::vector<std::size_t> heads{1, 2, 3, 6};
  const HeadSweep s = sweep_heads(cfg, toy_model(), heads, toy_source(), 2);
  REQUIRE(s.entries.size() == 4);
  double best = 1e300;
  for (const auto& e : s.entries) best = std::min(best, e.sweep.best_val_loss.mean);
  for (const auto& e : s.entries)
    if (e.heads == s.selected_heads) CHECK(e.sweep.best_val_loss.mean == best);
  for (const auto& e : s.entries) CHECK(e.params == param_count([&] {
    ModelConfig m = toy_model();
    m.heads = e.heads;
    return m;
  }()));

  const std::vector<std::size_t> single{3};
  CHECK(sweep_heads(cfg, toy_model(), single, toy_source(), 1).selected_heads == 3);
  CHECK_THROWS_AS(sweep_heads(cfg, toy_model(), std::vector<std::size_t>{}, toy_source(), 1), ConfigError);
}

TEST_CASE("M=1 head sweep entry reproduces the matched ABMIL run") {
  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.epochs = 2;
  ModelConfig base = toy_model();
  base.attention_hidden = 3;
  const std::vector<std::size_t> one{1};
  const HeadSweep s = sweep_heads(cfg, base, one, toy_source(), 2);
  ModelConfig abmil = base;
  abmil.aggregator = Aggregator::abmil;
  abmil.heads = 1;
  const SeedSweep ref = sweep_seeds(cfg, abmil, toy_source(), 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(s.entries[0].sweep.runs[i].result.best_params == ref.runs[i].result.best_params);
    CHECK(s.entries[0].sweep.runs[i].result.history.back().val_loss ==
          ref.runs[i].result.history.back().val_loss);
  }
}

TEST_CASE("grid search covers the product and picks its minimum") {
  TrainConfig cfg;
  cfg.epochs = 2;
  const std::vector<double> lr{5e-4, 1e-4, 5e-5};
  const std::vector<double> wd{1e-4, 1e-5};
  const SeedData data = toy_source()(0);
  const GridSearch g = grid_search(cfg, toy_model(), lr, wd, data, 0, 2);
  REQUIRE(g.table.size() == 6);
  CHECK(g.table[1].learning_rate == 5e-4);
  CHECK(g.table[1].weight_decay == 1e-5);
  const auto chosen = std::find_if(g.table.begin(), g.table.end(), [&](const auto& r) {
    return r.learning_rate == g.learning_rate && r.weight_decay == g.weight_decay;
  });
  for (const auto& row : g.table) CHECK(chosen->best_val_loss <= row.best_val_loss);

  const std::vector<double> a{1e-3}, b{0.0};
  const GridSearch single = grid_search(cfg, toy_model(), a, b, data, 0);
  CHECK(single.learning_rate == 1e-3);
  CHECK(single.weight_decay == 0.0);

  // identical entries tie; the first in declared order wins
  const std::vector<double> same{1e-3, 1e-3};
  const GridSearch tie = grid_search(cfg, toy_model(), same, b, data, 0);
  CHECK(tie.table[0].best_val_loss == tie.table[1].best_val_loss);
}

TEST_CASE("evaluate reports binary metrics") {
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.epochs = 20;
  const ModelConfig model = toy_model();
  const RunResult r = train(cfg, model, toy_bags(20, 1), toy_bags(10, 2), 0);
  const TestMetrics m = evaluate(model, r.best_params, toy_bags(30, 3));
  CHECK(m.auc > 0.8);
  CHECK(m.f1 > 0.5);
  CHECK(m.accuracy > 0.5);
  const auto pred = predict(model, r.best_params, toy_bags(3, 3));
  for (const auto& p : pred) CHECK(std::abs(p.scores[0] + p.scores[1] - 1.0) < 1e-12);
}
