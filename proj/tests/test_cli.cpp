#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "madmil/bags.hpp"
#include "madmil/commands.hpp"
#include "madmil/rng.hpp"

using namespace madmil;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "madmil");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("madmil_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Small separable feature-bag dataset: positives carry one shifted instance.
void make_feature_data(const fs::path& dir, std::size_t dim, bool single_instance_test = false) {
  Rng rng(5);
  auto make = [&](const std::string& split, std::size_t count) {
    BagSet bags;
    for (std::size_t b = 0; b < count; ++b) {
      Bag bag;
      bag.bag_id = split + std::to_string(b);
      bag.label = b % 2;
      const std::size_t n = single_instance_test && split == "test" && b == 0 ? 1 : 3 + rng.index(3);
      bag.X = Tensor(n, dim);
      for (double& v : bag.X.values()) v = rng.uniform(0.0, 1.0);
      if (bag.label) bag.X(0, 0) += 3.0;
      bags.push_back(bag);
    }
    fs::create_directories(dir / split);
    write_feature_bags(bags, dir / split / "manifest.csv");
  };
  make("train", 12);
  make("val", 6);
  make("test", 8);
}

std::string feature_config(const fs::path& data, const std::string& model_lines,
                           const std::string& extra = "") {
  return "dataset.kind = feature_bags\n"
         "dataset.train_manifest = " + (data / "train/manifest.csv").string() + "\n" +
         "dataset.val_manifest = " + (data / "val/manifest.csv").string() + "\n" +
         "dataset.test_manifest = " + (data / "test/manifest.csv").string() + "\n" + model_lines +
         extra;
}

const std::string kMadmil3 =
    "model.aggregator = madmil\nmodel.input_dim = 5\nmodel.embed_dim = 7\nmodel.heads = 3\n";

}  // namespace

TEST_CASE("count writes exact integers and rounded strings") {
  const fs::path dir = scratch("count");
  write_text(dir / "abmil.cfg",
             "model.aggregator = abmil\nmodel.input_dim = 1024\nmodel.embed_dim = 512\n");
  auto r = run({"count", "--config", (dir / "abmil.cfg").string(), "--out", (dir / "a").string()});
  REQUIRE(r.code == 0);
  auto rows = read_csv(dir / "a/accounting.csv");
  REQUIRE(rows.size() == 2);
  std::map<std::string, std::string> rec;
  for (std::size_t i = 0; i < rows[0].size(); ++i) rec[rows[0][i]] = i < rows[1].size() ? rows[1][i] : "";
  CHECK(rec["params"] == "788739");
  CHECK(rec["params_k"] == "788.7 K");
  CHECK(rec["flops"] == "94403584");
  CHECK(rec["flops_m"] == "94.4 M");
  CHECK(rec["note"].empty());

  write_text(dir / "m8.cfg",
             "model.aggregator = madmil\nmodel.heads = 8\nmodel.input_dim = 1024\nmodel.embed_dim = 512\n");
  r = run({"count", "--config", (dir / "m8.cfg").string(), "--out", (dir / "b").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("559370") != std::string::npos);
  CHECK(r.out.find("559.4 K") != std::string::npos);
  CHECK(r.out.find("size differs") != std::string::npos);
}

TEST_CASE("train writes consistent, reproducible artifacts") {
  const fs::path dir = scratch("train");
  make_feature_data(dir / "data", 5);
  write_text(dir / "t.cfg", feature_config(dir / "data", kMadmil3,
                                           "training.epochs = 4\ntraining.lr = 0.005\n"
                                           "training.weight_decay = 0\ntraining.seeds = 3\n"));
  auto r = run({"train", "--config", (dir / "t.cfg").string(), "--out", (dir / "r1").string(), "--jobs", "2"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run({"train", "--config", (dir / "t.cfg").string(), "--out", (dir / "r2").string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"results.csv", "history.csv", "summary.csv", "model_seed1.params"})
    CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));

  const auto results = read_csv(dir / "r1/results.csv");
  REQUIRE(results.size() == 4);
  CHECK(results[0] == std::vector<std::string>{"seed", "auc", "f1", "accuracy", "best_epoch"});
  CHECK(read_csv(dir / "r1/history.csv").size() == 1 + 3 * 4);
  const auto summary = read_csv(dir / "r1/summary.csv");
  REQUIRE(summary.size() == 4);
  for (std::size_t m = 0; m < 3; ++m) {
    std::vector<double> col;
    for (std::size_t i = 1; i < results.size(); ++i) col.push_back(std::stod(results[i][m + 1]));
    CHECK(summary[m + 1][0] == results[0][m + 1]);
    CHECK(std::stod(summary[m + 1][1]) == mean_std(col).mean);
    CHECK(std::stod(summary[m + 1][2]) == mean_std(col).std);
  }
  CHECK(fs::exists(dir / "r1/config.txt"));
}

TEST_CASE("lr=0 gives constant validation history") {
  const fs::path dir = scratch("lr0");
  make_feature_data(dir / "data", 5);
  write_text(dir / "t.cfg", feature_config(dir / "data", kMadmil3,
                                           "training.epochs = 3\ntraining.lr = 0\n"
                                           "training.weight_decay = 0\ntraining.seeds = 1\n"));
  REQUIRE(run({"train", "--config", (dir / "t.cfg").string(), "--out", (dir / "r").string()}).code == 0);
  const auto h = read_csv(dir / "r/history.csv");
  REQUIRE(h.size() == 4);
  CHECK(h[1][3] == h[2][3]);
  CHECK(h[2][3] == h[3][3]);
}

TEST_CASE("grid search records every pair") {
  const fs::path dir = scratch("grid");
  make_feature_data(dir / "data", 5);
  write_text(dir / "t.cfg", feature_config(dir / "data", kMadmil3,
                                           "training.epochs = 2\ntraining.lr = 0.01, 0.001\n"
                                           "training.weight_decay = 0, 0.001\ntraining.seeds = 1\n"));
  REQUIRE(run({"train", "--config", (dir / "t.cfg").string(), "--out", (dir / "r").string()}).code == 0);
  CHECK(read_csv(dir / "r/grid.csv").size() == 5);
}

TEST_CASE("heatmap exports normalized weights per head") {
  const fs::path dir = scratch("heatmap");
  make_feature_data(dir / "data", 5, true);
  write_text(dir / "h.cfg", feature_config(dir / "data", kMadmil3,
                                           "training.epochs = 2\ntraining.lr = 0.005\n"
                                           "training.weight_decay = 0\nheatmap.bags = 3\n"));
  auto r = run({"heatmap", "--config", (dir / "h.cfg").string(), "--out", (dir / "o").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = read_csv(dir / "o/attention.csv");
  CHECK(rows[0] == std::vector<std::string>{"bag_id", "instance_id", "head", "weight"});
  std::map<std::pair<std::string, std::string>, double> sums;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    sums[{rows[i][0], rows[i][2]}] += std::stod(rows[i][3]);
    if (rows[i][0] == "test0") CHECK(rows[i][3] == "1");
  }
  CHECK(sums.size() == 3 * 3);
  for (const auto& [key, total] : sums) CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("heatmap on a pooling model exits 2") {
  const fs::path dir = scratch("heatmap_pool");
  make_feature_data(dir / "data", 5);
  write_text(dir / "h.cfg", feature_config(dir / "data",
                                           "model.aggregator = mean_pool\nmodel.input_dim = 5\n"
                                           "model.embed_dim = 4\n"));
  const auto r = run({"heatmap", "--config", (dir / "h.cfg").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("no attention weights") != std::string::npos);
}

TEST_CASE("sweep writes one row per M and selects the minimum") {
  const fs::path dir = scratch("sweep");
  make_feature_data(dir / "data", 5);
  write_text(dir / "s.cfg", feature_config(dir / "data", kMadmil3,
                                           "training.epochs = 2\ntraining.lr = 0.005\n"
                                           "training.weight_decay = 0\ntraining.seeds = 2\n"
                                           "sweep.heads = 1, 2, 7\n"));
  const auto r = run({"sweep", "--config", (dir / "s.cfg").string(), "--out", (dir / "o").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = read_csv(dir / "o/sweep.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"M", "mean_val_loss", "mean_auc", "mean_f1", "params", "flops"});
  std::string best;
  double lowest = 1e300;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (std::stod(rows[i][1]) < lowest) {
      lowest = std::stod(rows[i][1]);
      best = rows[i][0];
    }
  }
  CHECK(r.out.find("selected M = " + best) != std::string::npos);
}

TEST_CASE("configuration errors exit 2") {
  const fs::path dir = scratch("errors");
  write_text(dir / "unknown.cfg", "model.aggregator = abmil\nmodel.colour = red\n");
  CHECK(run({"count", "--config", (dir / "unknown.cfg").string()}).code == 2);
  write_text(dir / "equal.cfg", "dataset.kind = mnist_bags\ndataset.p_pos = 0.3\ndataset.p_neg = 0.3\n");
  const auto eq = run({"generate", "--config", (dir / "equal.cfg").string()});
  CHECK(eq.code == 2);
  CHECK(eq.err.find("p_pos") != std::string::npos);
  write_text(dir / "noidx.cfg",
             "dataset.kind = mnist_bags\ndataset.mnist_dir = " + (dir / "nowhere").string() +
                 "\ndataset.p_pos = 0.4\ndataset.p_neg = 0.2\n");
  CHECK(run({"generate", "--config", (dir / "noidx.cfg").string(), "--out", (dir / "g").string()}).code == 2);
  CHECK(run({"train", "--config", (dir / "missing.cfg").string()}).code == 2);
  CHECK(run({"train"}).code == 2);
  CHECK(run({"frobnicate", "--config", "x"}).code == 2);
  write_text(dir / "dup.cfg", "model.heads = 2\nmodel.heads = 3\n");
  CHECK(run({"count", "--config", (dir / "dup.cfg").string()}).code == 2);
}

TEST_CASE("numerical failure exits 3") {
  const fs::path dir = scratch("nan");
  make_feature_data(dir / "data", 5);
  write_text(dir / "data/train/bags/train0.csv", "nan,0,0,0,0\n");
  write_text(dir / "t.cfg", feature_config(dir / "data", kMadmil3,
                                           "training.epochs = 1\ntraining.lr = 0.001\n"
                                           "training.weight_decay = 0\ntraining.seeds = 1\n"));
  const auto r = run({"train", "--config", (dir / "t.cfg").string(), "--out", (dir / "r").string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("the installed binary returns the same exit codes") {
  const std::string cli = MADMIL_CLI_PATH;
  CHECK(std::system((cli + " --help > /dev/null").c_str()) == 0);
  const int status = std::system((cli + " count --config /nonexistent.cfg 2> /dev/null").c_str());
  CHECK(WEXITSTATUS(status) == 2);
}

TEST_CASE("generate is reproducible when MNIST is available") {
  const char* data = std::getenv("MADMIL_DATA_DIR");
  if (!data || !*data || !fs::exists(fs::path(data) / "train-images-idx3-ubyte")) {
    MESSAGE("MADMIL_DATA_DIR not set; skipping");
    return;
  }
  const fs::path dir = scratch("generate");
  write_text(dir / "g.cfg",
             "dataset.kind = mnist_bags\ndataset.p_pos = 0.4\ndataset.p_neg = 0.2\n"
             "dataset.n_train = 4\ndataset.n_val = 2\ndataset.n_test = 3\ndataset.seed = 12\n");
  auto a = run({"generate", "--config", (dir / "g.cfg").string(), "--out", (dir / "a").string()});
  REQUIRE_MESSAGE(a.code == 0, a.err);
  REQUIRE(run({"generate", "--config", (dir / "g.cfg").string(), "--out", (dir / "b").string()}).code == 0);
  CHECK(read_csv(dir / "a/train/manifest.csv").size() == 5);
  CHECK(read_csv(dir / "a/test/manifest.csv").size() == 4);
  for (const char* f : {"train/manifest.csv", "test/instances.csv", "val/bags/val_0001.csv"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  CHECK(a.out.find("train: 4 bags") != std::string::npos);
}
