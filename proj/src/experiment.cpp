#include "madmil/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "madmil/error.hpp"
#include "madmil/format.hpp"

namespace madmil {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

double real(const std::string& key, const std::string& text) {
  double v = 0.0;
  if (!parse_number(text, v)) throw ConfigError(key + ": '" + text + "' is not a number");
  return v;
}

std::uint64_t count(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  if (!parse_number(text, v)) throw ConfigError(key + ": '" + text + "' is not a non-negative integer");
  return v;
}

bool boolean(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": '" + text + "' is not a boolean");
}

fs::path resolve(const fs::path& base, const std::string& text) {
  const fs::path p(text);
  return p.is_absolute() || base.empty() ? p : base / p;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += to_decimal(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

}  // namespace

std::vector<double> parse_real_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(real(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

void ExperimentConfig::require(const std::vector<std::string>& keys) const {
  std::string missing;
  for (const auto& k : keys) {
    if (!has(k)) missing += (missing.empty() ? "" : ", ") + k;
  }
  if (!missing.empty()) throw ConfigError("missing required config keys: " + missing);
}

ExperimentConfig parse_experiment(const std::string& text, const fs::path& base_dir) {
  ExperimentConfig cfg;
  if (const char* env = std::getenv("MADMIL_DATA_DIR")) cfg.dataset.mnist_dir = env;

  using Setter = std::function<void(const std::string& key, const std::string& value)>;
  const std::map<std::string, Setter> setters{
      {"dataset.kind",
       [&](auto& k, auto& v) {
         if (v == "mnist_bags") cfg.dataset.kind = DatasetKind::mnist_bags;
         else if (v == "feature_bags") cfg.dataset.kind = DatasetKind::feature_bags;
         else throw ConfigError(k + ": expected mnist_bags or feature_bags, got '" + v + "'");
       }},
      {"dataset.mnist_dir", [&](auto&, auto& v) { cfg.dataset.mnist_dir = resolve(base_dir, v); }},
      {"dataset.p_pos", [&](auto& k, auto& v) { cfg.dataset.soft.p_pos = real(k, v); }},
      {"dataset.p_neg", [&](auto& k, auto& v) { cfg.dataset.soft.p_neg = real(k, v); }},
      {"dataset.bag_size", [&](auto& k, auto& v) { cfg.dataset.soft.bag_size = count(k, v); }},
      {"dataset.n_train", [&](auto& k, auto& v) { cfg.dataset.soft.n_train = count(k, v); }},
      {"dataset.n_val", [&](auto& k, auto& v) { cfg.dataset.soft.n_val = count(k, v); }},
      {"dataset.n_test", [&](auto& k, auto& v) { cfg.dataset.soft.n_test = count(k, v); }},
      {"dataset.key_digit",
       [&](auto& k, auto& v) {
         const auto d = count(k, v);
         if (d > 9) throw ConfigError(k + ": digit must be 0..9");
         cfg.dataset.soft.key_digit = static_cast<std::uint8_t>(d);
       }},
      {"dataset.seed", [&](auto& k, auto& v) { cfg.dataset.soft.seed = count(k, v); }},
      {"dataset.train_manifest",
       [&](auto&, auto& v) { cfg.dataset.train_manifest = resolve(base_dir, v); }},
      {"dataset.val_manifest",
       [&](auto&, auto& v) { cfg.dataset.val_manifest = resolve(base_dir, v); }},
      {"dataset.test_manifest",
       [&](auto&, auto& v) { cfg.dataset.test_manifest = resolve(base_dir, v); }},
      {"model.aggregator", [&](auto&, auto& v) { cfg.model.aggregator = parse_aggregator(v); }},
      {"model.input_dim", [&](auto& k, auto& v) { cfg.model.input_dim = count(k, v); }},
      {"model.embed_dim", [&](auto& k, auto& v) { cfg.model.embed_dim = count(k, v); }},
      {"model.heads", [&](auto& k, auto& v) { cfg.model.heads = count(k, v); }},
      {"model.classes", [&](auto& k, auto& v) { cfg.model.classes = count(k, v); }},
      {"model.attention_hidden",
       [&](auto& k, auto& v) { cfg.model.attention_hidden = count(k, v); }},
      {"training.epochs", [&](auto& k, auto& v) { cfg.training.epochs = count(k, v); }},
      {"training.lr", [&](auto& k, auto& v) { cfg.lr_grid = parse_real_list(v, k); }},
      {"training.weight_decay", [&](auto& k, auto& v) { cfg.wd_grid = parse_real_list(v, k); }},
      {"training.seeds", [&](auto& k, auto& v) { cfg.seeds = count(k, v); }},
      {"training.first_seed", [&](auto& k, auto& v) { cfg.first_seed = count(k, v); }},
      {"training.shuffle", [&](auto& k, auto& v) { cfg.training.shuffle = boolean(k, v); }},
      {"count.instances", [&](auto& k, auto& v) { cfg.count_instances = count(k, v); }},
      {"sweep.heads",
       [&](auto& k, auto& v) {
         cfg.sweep_heads.clear();
         for (const auto& item : split_list(v)) cfg.sweep_heads.push_back(count(k, item));
       }},
      {"heatmap.bags", [&](auto& k, auto& v) { cfg.heatmap_bags = count(k, v); }},
      {"heatmap.bag_ids", [&](auto&, auto& v) { cfg.heatmap_bag_ids = split_list(v); }},
      {"heatmap.model", [&](auto&, auto& v) { cfg.heatmap_model = resolve(base_dir, v); }},
      {"output.dir", [&](auto&, auto& v) { cfg.output_dir = resolve(base_dir, v); }},
  };

  std::stringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string content = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(content.substr(0, eq));
    const std::string value = trim(content.substr(eq + 1));
    const auto setter = setters.find(key);
    if (setter == setters.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (cfg.raw.count(key)) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    if (value.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + key + "' has no value");
    }
    setter->second(key, value);
    cfg.raw[key] = value;
  }

  // Unset tuning keys fall back to the per-dataset defaults.
  const bool features = cfg.dataset.kind == DatasetKind::feature_bags;
  if (!cfg.has("training.epochs")) cfg.training.epochs = features ? 50 : 20;
  if (!cfg.has("training.lr")) cfg.lr_grid = features ? std::vector{1e-4} : std::vector{5e-4, 1e-4, 5e-5};
  if (!cfg.has("training.weight_decay")) {
    cfg.wd_grid = features ? std::vector{1e-5, 1e-4, 1e-3} : std::vector{1e-4, 1e-5};
  }

  // Range checks that do not depend on the subcommand.
  if (cfg.has("dataset.p_pos") || cfg.has("dataset.p_neg")) cfg.dataset.soft.validate();
  if (cfg.has("model.aggregator")) cfg.model.validate();
  if (cfg.training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
  for (double lr : cfg.lr_grid)
    if (!(lr >= 0.0)) throw ConfigError("training.lr values must be >= 0");
  for (double wd : cfg.wd_grid)
    if (!(wd >= 0.0)) throw ConfigError("training.weight_decay values must be >= 0");
  if (cfg.seeds < 1) throw ConfigError("training.seeds must be >= 1");
  if (cfg.count_instances < 1) throw ConfigError("count.instances must be >= 1");
  for (std::size_t m : cfg.sweep_heads)
    if (m < 1) throw ConfigError("sweep.heads values must be >= 1");
  cfg.training.learning_rate = cfg.lr_grid.front();
  cfg.training.weight_decay = cfg.wd_grid.front();
  return cfg;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment(buffer.str(), path.parent_path());
}

std::string ExperimentConfig::dump() const {
  std::ostringstream out;
  const auto& s = dataset.soft;
  out << "dataset.kind = "
      << (dataset.kind == DatasetKind::mnist_bags ? "mnist_bags" : "feature_bags") << '\n';
  if (dataset.kind == DatasetKind::mnist_bags) {
    out << "dataset.mnist_dir = " << dataset.mnist_dir.string() << '\n'
        << "dataset.p_pos = " << to_decimal(s.p_pos) << '\n'
        << "dataset.p_neg = " << to_decimal(s.p_neg) << '\n'
        << "dataset.bag_size = " << s.bag_size << '\n'
        << "dataset.n_train = " << s.n_train << '\n'
        << "dataset.n_val = " << s.n_val << '\n'
        << "dataset.n_test = " << s.n_test << '\n'
        << "dataset.key_digit = " << static_cast<int>(s.key_digit) << '\n'
        << "dataset.seed = " << s.seed << '\n';
  } else {
    out << "dataset.train_manifest = " << dataset.train_manifest.string() << '\n'
        << "dataset.val_manifest = " << dataset.val_manifest.string() << '\n'
        << "dataset.test_manifest = " << dataset.test_manifest.string() << '\n';
  }
  out << "model.aggregator = " << to_string(model.aggregator) << '\n'
      << "model.input_dim = " << model.input_dim << '\n'
      << "model.embed_dim = " << model.embed_dim << '\n'
      << "model.heads = " << model.heads << '\n'
      << "model.classes = " << model.classes << '\n';
  if (model.attention_hidden) out << "model.attention_hidden = " << *model.attention_hidden << '\n';
  out << "training.epochs = " << training.epochs << '\n'
      << "training.lr = " << join(lr_grid) << '\n'
      << "training.weight_decay = " << join(wd_grid) << '\n'
      << "training.seeds = " << seeds << '\n'
      << "training.first_seed = " << first_seed << '\n'
      << "training.shuffle = " << (training.shuffle ? "true" : "false") << '\n'
      << "count.instances = " << count_instances << '\n';
  if (!sweep_heads.empty()) out << "sweep.heads = " << join(sweep_heads) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Params files

namespace {

constexpr const char* kParamsHeader = "madmil-params 1";

std::vector<std::pair<std::string, const Tensor*>> named(const ModelParams& p) {
  std::vector<std::pair<std::string, const Tensor*>> out{{"compress_weight", &p.compress_weight},
                                                         {"compress_bias", &p.compress_bias}};
  for (std::size_t m = 0; m < p.heads.size(); ++m) {
    const auto& h = p.heads[m];
    const std::string tag = "head" + std::to_string(m) + ".";
    out.insert(out.end(), {{tag + "V", &h.V},
                           {tag + "U", &h.U},
                           {tag + "w", &h.w},
                           {tag + "b_V", &h.b_V},
                           {tag + "b_U", &h.b_U},
                           {tag + "b_w", &h.b_w}});
  }
  out.emplace_back("classifier_weight", &p.classifier_weight);
  out.emplace_back("classifier_bias", &p.classifier_bias);
  return out;
}

}  // namespace

void save_params(const fs::path& path, const ModelConfig& config, const ModelParams& params) {
  check_params(config, params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write params file " + path.string());
  out << kParamsHeader << '\n'
      << "aggregator " << to_string(config.aggregator) << '\n'
      << "input_dim " << config.input_dim << '\n'
      << "embed_dim " << config.embed_dim << '\n'
      << "heads " << config.heads << '\n'
      << "classes " << config.classes << '\n'
      << "attention_hidden " << config.head_hidden() << '\n';
  for (const auto& [name, tensor] : named(params)) {
    out << name << ' ' << tensor->rows() << ' ' << tensor->cols() << '\n';
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      if (i) out << ' ';
      out << to_decimal((*tensor)[i]);
    }
    out << '\n';
  }
}

ModelParams load_params(const fs::path& path, const ModelConfig& expected) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open params file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kParamsHeader) {
    throw FormatError(path.string() + ": not a params file");
  }
  std::map<std::string, std::string> header;
  for (int i = 0; i < 6; ++i) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": truncated header");
    const auto sp = line.find(' ');
    header[line.substr(0, sp)] = sp == std::string::npos ? "" : line.substr(sp + 1);
  }
  const auto mismatch = [&](const std::string& field, const std::string& want) {
    if (header[field] != want) {
      throw ConfigError(path.string() + ": model " + field + " is '" + header[field] +
                        "', config says '" + want + "'");
    }
  };
  mismatch("aggregator", std::string(to_string(expected.aggregator)));
  mismatch("input_dim", std::to_string(expected.input_dim));
  mismatch("embed_dim", std::to_string(expected.embed_dim));
  mismatch("heads", std::to_string(expected.heads));
  mismatch("classes", std::to_string(expected.classes));
  mismatch("attention_hidden", std::to_string(expected.head_hidden()));

  ModelParams params = zero_params(expected);
  for (auto& [name, slot] : named(params)) {
    std::string got;
    std::size_t rows = 0, cols = 0;
    if (!(in >> got >> rows >> cols) || got != name) {
      throw FormatError(path.string() + ": expected tensor '" + name + "'");
    }
    Tensor& t = *const_cast<Tensor*>(slot);
    if (rows != t.rows() || cols != t.cols()) {
      throw FormatError(path.string() + ": tensor '" + name + "' has the wrong shape");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::string cell;
      if (!(in >> cell) || !parse_number(cell, t[i])) {
        throw FormatError(path.string() + ": bad value in tensor '" + name + "'");
      }
    }
  }
  return params;
}

}  // namespace madmil
