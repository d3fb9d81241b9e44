#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "madmil/bags.hpp"
#include "madmil/models.hpp"
#include "madmil/training.hpp"

namespace madmil {

enum class DatasetKind { mnist_bags, feature_bags };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::mnist_bags;
  std::filesystem::path mnist_dir;  // defaults to $MADMIL_DATA_DIR
  SoftBagConfig soft;
  std::filesystem::path train_manifest, val_manifest, test_manifest;
};

/// Parsed `section.key = value` experiment file.
///
///   dataset.kind            mnist_bags | feature_bags
///   dataset.mnist_dir       IDX directory (default $MADMIL_DATA_DIR)
///   dataset.p_pos / p_neg / bag_size / n_train / n_val / n_test / key_digit / seed
///   dataset.train_manifest / val_manifest / test_manifest   (feature_bags)
///   model.aggregator / input_dim / embed_dim / heads / classes / attention_hidden
///   training.epochs / lr / weight_decay / seeds / first_seed / shuffle
///   count.instances
///   sweep.heads
///   heatmap.bags / heatmap.bag_ids / heatmap.model
///   output.dir
///
/// `training.lr` and `training.weight_decay` accept comma lists; more than one
/// value in either turns on the grid search. When absent they default to
/// lr {5e-4, 1e-4, 5e-5} × wd {1e-4, 1e-5} with 20 epochs for mnist_bags, and
/// lr 1e-4 × wd {1e-5, 1e-4, 1e-3} with 50 epochs for feature_bags.
/// Relative paths resolve against the config file's directory.
struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig training;
  std::vector<double> lr_grid{1e-4};
  std::vector<double> wd_grid{0.0};
  std::size_t seeds = 10;
  std::uint64_t first_seed = 0;
  std::size_t count_instances = 120;
  std::vector<std::size_t> sweep_heads;
  std::size_t heatmap_bags = 5;
  std::vector<std::string> heatmap_bag_ids;
  std::filesystem::path heatmap_model;
  std::filesystem::path output_dir = "runs";

  /// Keys that appeared in the file, for per-command required-key checks.
  std::map<std::string, std::string> raw;

  bool has(const std::string& key) const { return raw.count(key) != 0; }
  /// Throws ConfigError listing whichever of `keys` are missing.
  void require(const std::vector<std::string>& keys) const;

  /// Canonical `key = value` dump of every effective setting.
  std::string dump() const;
};

ExperimentConfig parse_experiment(const std::string& text,
                                  const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Lists of numbers: "1e-4, 5e-5".
std::vector<double> parse_real_list(const std::string& text, const std::string& key);

// Trained-model files: a text header with the model config, then every
// tensor as "name rows cols" followed by its values in round-trip decimals.
void save_params(const std::filesystem::path& path, const ModelConfig& config,
                 const ModelParams& params);
ModelParams load_params(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace madmil
