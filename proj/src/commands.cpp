#include "madmil/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "madmil/accounting.hpp"
#include "madmil/error.hpp"
#include "madmil/format.hpp"

namespace madmil {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

void write_config_copy(const ExperimentConfig& config, const fs::path& dir) {
  open_output(dir / "config.txt") << config.dump();
}

void require_dataset(const ExperimentConfig& config) {
  config.require({"dataset.kind"});
  if (config.dataset.kind == DatasetKind::feature_bags) {
    config.require({"dataset.train_manifest", "dataset.val_manifest", "dataset.test_manifest"});
  } else if (config.dataset.mnist_dir.empty()) {
    throw ConfigError("dataset.mnist_dir is not set and MADMIL_DATA_DIR is empty");
  }
}

void require_model(const ExperimentConfig& config) {
  config.require({"model.aggregator", "model.input_dim", "model.embed_dim"});
  config.model.validate();
}

/// Data for every seed. MNIST soft bags are regenerated per seed (data seed
/// = dataset.seed + run seed); feature bags are loaded once and shared.
DataSource make_source(const ExperimentConfig& config) {
  if (config.dataset.kind == DatasetKind::mnist_bags) {
    auto mnist = std::make_shared<const MnistData>(load_mnist(config.dataset.mnist_dir));
    const SoftBagConfig soft = config.dataset.soft;
    soft.validate();
    return [mnist, soft](std::uint64_t seed) {
      SoftBagConfig s = soft;
      s.seed = soft.seed + seed;
      BagSplits splits = make_soft_bags(s, *mnist);
      return SeedData{std::move(splits.train), std::move(splits.val), std::move(splits.test)};
    };
  }
  auto data = std::make_shared<const SeedData>(SeedData{
      load_feature_bags(config.dataset.train_manifest),
      load_feature_bags(config.dataset.val_manifest),
      load_feature_bags(config.dataset.test_manifest)});
  return [data](std::uint64_t) { return *data; };
}

fs::path output_dir(const ExperimentConfig& config, const CommandOptions& options) {
  fs::path dir = options.out_dir.empty() ? config.output_dir : options.out_dir;
  fs::create_directories(dir);
  return dir;
}

std::uint64_t first_seed(const ExperimentConfig& config, const CommandOptions& options) {
  return options.seed.value_or(config.first_seed);
}

bool has_grid(const ExperimentConfig& config) {
  return config.lr_grid.size() > 1 || config.wd_grid.size() > 1;
}

/// Grid search on the first seed's data when more than one lr/wd is given,
/// otherwise the single configured pair.
TrainConfig tune(const ExperimentConfig& config, const ModelConfig& model, const DataSource& data,
                 std::uint64_t seed, std::size_t jobs, std::ostream& log, std::ostream* grid_csv) {
  TrainConfig training = config.training;
  if (!has_grid(config)) return training;
  const GridSearch grid =
      grid_search(training, model, config.lr_grid, config.wd_grid, data(seed), seed, jobs);
  for (const auto& row : grid.table) {
    if (grid_csv) {
      *grid_csv << model.label() << ',' << to_decimal(row.learning_rate) << ','
                << to_decimal(row.weight_decay) << ',' << to_decimal(row.best_val_loss) << '\n';
    }
  }
  training.learning_rate = grid.learning_rate;
  training.weight_decay = grid.weight_decay;
  log << model.label() << ": grid selected lr=" << to_decimal(grid.learning_rate)
      << " wd=" << to_decimal(grid.weight_decay) << '\n';
  return training;
}

std::string bag_filename(const std::string& bag_id) {
  std::string out;
  for (char c : bag_id) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_');
  return out;
}

}  // namespace

void write_pgm(const fs::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height) throw DimensionError("write_pgm: pixel count mismatch");
  std::ofstream out = open_output(path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

// ---------------------------------------------------------------------------

void cmd_generate(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  config.require({"dataset.kind", "dataset.p_pos", "dataset.p_neg"});
  if (config.dataset.kind != DatasetKind::mnist_bags) {
    throw ConfigError("generate only builds mnist_bags datasets");
  }
  require_dataset(config);
  SoftBagConfig soft = config.dataset.soft;
  if (options.seed) soft.seed = *options.seed;
  soft.validate();
  const MnistData mnist = load_mnist(config.dataset.mnist_dir);
  const BagSplits splits = make_soft_bags(soft, mnist);
  const fs::path dir = output_dir(config, options);
  write_config_copy(config, dir);
  for (const auto& [name, bags] : {std::pair<std::string, const BagSet*>{"train", &splits.train},
                                   {"val", &splits.val},
                                   {"test", &splits.test}}) {
    fs::create_directories(dir / name);
    write_feature_bags(*bags, dir / name / "manifest.csv");
    std::ofstream ids = open_output(dir / name / "instances.csv");
    ids << "bag_id,row,instance_id\n";
    for (const Bag& bag : *bags)
      for (std::size_t r = 0; r < bag.instance_ids.size(); ++r)
        ids << bag.bag_id << ',' << r << ',' << bag.instance_ids[r] << '\n';
    log << name << ": " << bags->size() << " bags\n";
  }
}

void cmd_train(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  require_dataset(config);
  require_model(config);
  const fs::path dir = output_dir(config, options);
  write_config_copy(config, dir);
  const DataSource data = make_source(config);
  const std::uint64_t seed0 = first_seed(config, options);

  std::unique_ptr<std::ofstream> grid_csv;
  if (has_grid(config)) {
    grid_csv = std::make_unique<std::ofstream>(open_output(dir / "grid.csv"));
    *grid_csv << "model,lr,weight_decay,best_val_loss\n";
  }
  const TrainConfig training = tune(config, config.model, data, seed0, options.jobs, log, grid_csv.get());
  const SeedSweep sweep = sweep_seeds(training, config.model, data, config.seeds, options.jobs, seed0);

  std::ofstream history = open_output(dir / "history.csv");
  history << "seed,epoch,train_loss,val_loss\n";
  std::ofstream results = open_output(dir / "results.csv");
  results << "seed,auc,f1,accuracy,best_epoch\n";
  for (const auto& run : sweep.runs) {
    for (const auto& rec : run.result.history) {
      history << run.seed << ',' << rec.epoch << ',' << to_decimal(rec.train_loss) << ','
              << to_decimal(rec.val_loss) << '\n';
    }
    const auto& m = run.result.test_metrics;
    results << run.seed << ',' << to_decimal(m.auc) << ',' << to_decimal(m.f1) << ','
            << to_decimal(m.accuracy) << ',' << run.result.best_epoch << '\n';
    save_params(dir / ("model_seed" + std::to_string(run.seed) + ".params"), config.model,
                run.result.best_params);
  }
  std::ofstream summary = open_output(dir / "summary.csv");
  summary << "metric,mean,std\n";
  for (const auto& [name, stat] : {std::pair<const char*, MeanStd>{"auc", sweep.auc},
                                   {"f1", sweep.f1},
                                   {"accuracy", sweep.accuracy}}) {
    summary << name << ',' << to_decimal(stat.mean) << ',' << to_decimal(stat.std) << '\n';
  }
  log << config.model.label() << " over " << config.seeds << " seed(s): AUC "
      << format_mean_std(sweep.auc) << ", F1 " << format_mean_std(sweep.f1) << '\n';
}

void cmd_count(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  require_model(config);
  const ModelConfig& model = config.model;
  const std::size_t N = config.count_instances;
  const std::uint64_t params = param_count(model);
  const std::uint64_t macs = flops(model, N);
  const std::string size_text = format_thousands(params);
  const std::string flops_text = format_millions(macs);

  std::string ref_k, ref_m, size_gap, flops_gap, note;
  if (const auto ref = reference_figures(model); ref && N == 120) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f K", ref->size_k);
    ref_k = buf;
    std::snprintf(buf, sizeof buf, "%.1f M", ref->flops_m);
    ref_m = buf;
    const double sg = 100.0 * (static_cast<double>(params) / 1e3 - ref->size_k) / ref->size_k;
    const double fg = 100.0 * (static_cast<double>(macs) / 1e6 - ref->flops_m) / ref->flops_m;
    std::snprintf(buf, sizeof buf, "%.3f", sg);
    size_gap = buf;
    std::snprintf(buf, sizeof buf, "%.3f", fg);
    flops_gap = buf;
    if (ref_k != size_text) note += "size differs from reference (" + size_gap + " %)";
    if (ref_m != flops_text) {
      note += std::string(note.empty() ? "" : "; ") + "flops differ from reference (" + flops_gap + " %)";
    }
  }

  const fs::path dir = output_dir(config, options);
  std::ofstream out = open_output(dir / "accounting.csv");
  out << "model,aggregator,input_dim,embed_dim,heads,classes,head_width,head_hidden,instances,"
         "params,params_k,flops,flops_m,reference_k,reference_m,size_gap_pct,flops_gap_pct,note\n";
  out << model.label() << ',' << to_string(model.aggregator) << ',' << model.input_dim << ','
      << model.embed_dim << ',' << model.head_count() << ',' << model.classes << ','
      << model.head_width() << ',' << model.head_hidden() << ',' << N << ',' << params << ','
      << size_text << ',' << macs << ',' << flops_text << ',' << ref_k << ',' << ref_m << ','
      << size_gap << ',' << flops_gap << ',' << note << '\n';

  log << model.label() << ": " << params << " params (" << size_text << "), " << macs
      << " MACs at N=" << N << " (" << flops_text << ")\n";
  if (!ref_k.empty()) log << "  reference: " << ref_k << ", " << ref_m << '\n';
  if (!note.empty()) log << "  note: " << note << '\n';
}

void cmd_sweep(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  require_dataset(config);
  require_model(config);
  config.require({"sweep.heads"});
  const fs::path dir = output_dir(config, options);
  write_config_copy(config, dir);
  const DataSource data = make_source(config);
  const std::uint64_t seed0 = first_seed(config, options);

  std::unique_ptr<std::ofstream> grid_csv;
  if (has_grid(config)) {
    grid_csv = std::make_unique<std::ofstream>(open_output(dir / "grid.csv"));
    *grid_csv << "model,lr,weight_decay,best_val_loss\n";
  }
  const Tuner tuner = [&](const ModelConfig& model) {
    return tune(config, model, data, seed0, options.jobs, log, grid_csv.get());
  };
  const HeadSweep result = sweep_heads(config.training, config.model, config.sweep_heads, data,
                                       config.seeds, options.jobs, config.count_instances, seed0,
                                       tuner);
  std::ofstream out = open_output(dir / "sweep.csv");
  out << "M,mean_val_loss,mean_auc,mean_f1,params,flops\n";
  for (const auto& e : result.entries) {
    out << e.heads << ',' << to_decimal(e.sweep.best_val_loss.mean) << ','
        << to_decimal(e.sweep.auc.mean) << ',' << to_decimal(e.sweep.f1.mean) << ',' << e.params
        << ',' << e.flops << '\n';
    log << "M=" << e.heads << ": val loss " << std::fixed << std::setprecision(4)
        << e.sweep.best_val_loss.mean << std::defaultfloat << ", AUC "
        << format_mean_std(e.sweep.auc) << ", params " << e.params << '\n';
  }
  log << "selected M = " << result.selected_heads << '\n';
}

void cmd_heatmap(const ExperimentConfig& config, const CommandOptions& options, std::ostream& log) {
  require_dataset(config);
  require_model(config);
  const ModelConfig& model = config.model;
  if (!model.uses_attention()) {
    throw ConfigError(std::string(to_string(model.aggregator)) + " has no attention weights");
  }
  const fs::path dir = output_dir(config, options);
  write_config_copy(config, dir);
  const DataSource data = make_source(config);
  const std::uint64_t seed = first_seed(config, options);
  const SeedData seed_data = data(seed);

  ModelParams params;
  if (!config.heatmap_model.empty()) {
    params = load_params(config.heatmap_model, model);
  } else {
    const TrainConfig training = tune(config, model, data, seed, options.jobs, log, nullptr);
    params = train(training, model, seed_data.train, seed_data.val, seed).best_params;
    save_params(dir / "model.params", model, params);
  }

  std::vector<const Bag*> chosen;
  if (!config.heatmap_bag_ids.empty()) {
    for (const auto& id : config.heatmap_bag_ids) {
      const auto it = std::find_if(seed_data.test.begin(), seed_data.test.end(),
                                   [&](const Bag& b) { return b.bag_id == id; });
      if (it == seed_data.test.end()) throw ConfigError("heatmap.bag_ids: no test bag '" + id + "'");
      chosen.push_back(&*it);
    }
  } else {
    for (std::size_t i = 0; i < std::min(config.heatmap_bags, seed_data.test.size()); ++i)
      chosen.push_back(&seed_data.test[i]);
  }

  const bool images = config.dataset.kind == DatasetKind::mnist_bags;
  const std::size_t side = 28;
  std::ofstream csv = open_output(dir / "attention.csv");
  csv << "bag_id,instance_id,head,weight\n";
  for (const Bag* bag : chosen) {
    const auto weights = attention_weights(model, params, bag->X);
    for (std::size_t n = 0; n < bag->size(); ++n)
      for (std::size_t m = 0; m < weights.size(); ++m)
        csv << bag->bag_id << ',' << bag->instance_ids[n] << ',' << m + 1 << ','
            << to_decimal(weights[m][n]) << '\n';
    if (!images || bag->X.cols() != side * side) continue;
    const std::size_t width = side * bag->size();
    for (std::size_t m = 0; m < weights.size(); ++m) {
      double peak = 0.0;
      for (std::size_t n = 0; n < bag->size(); ++n) peak = std::max(peak, weights[m][n]);
      std::vector<std::uint8_t> pixels(width * side);
      for (std::size_t n = 0; n < bag->size(); ++n) {
        const double scale = peak > 0.0 ? weights[m][n] / peak : 0.0;
        for (std::size_t r = 0; r < side; ++r)
          for (std::size_t c = 0; c < side; ++c) {
            const double v = bag->X(n, r * side + c) * 255.0 * scale;
            pixels[r * width + n * side + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
          }
      }
      write_pgm(dir / ("heatmap_" + bag_filename(bag->bag_id) + "_head" + std::to_string(m + 1) + ".pgm"),
                width, side, pixels);
    }
  }
  log << "exported attention for " << chosen.size() << " bag(s), " << model.head_count()
      << " head(s)\n";
}

// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiple-instance learning with multi-head gated attention"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;

  using Command = void (*)(const ExperimentConfig&, const CommandOptions&, std::ostream&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"generate", "Write soft MNIST bags to disk", cmd_generate},
      {"train", "Train over seeds and report AUC/F1", cmd_train},
      {"count", "Parameter and FLOP accounting", cmd_count},
      {"sweep", "Compare head counts by validation loss", cmd_sweep},
      {"heatmap", "Export per-head attention weights", cmd_heatmap},
  };
  Command selected = nullptr;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Experiment config file")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    sub->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "Seed override");
    sub->callback([&selected, fn = fn] { selected = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const ExperimentConfig config = load_experiment(config_path);
    CommandOptions options;
    options.out_dir = out_dir;
    options.jobs = jobs;
    options.seed = seed;
    selected(config, options, out);
    return kExitOk;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace madmil
