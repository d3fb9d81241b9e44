#include "madmil/bags.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <system_error>

#include "madmil/error.hpp"
#include "madmil/rng.hpp"

namespace madmil {

namespace fs = std::filesystem;

void validate_bag_set(const BagSet& bags, std::size_t classes) {
  if (bags.empty()) throw ConfigError("bag set is empty");
  const std::size_t width = bags.front().X.cols();
  for (const Bag& bag : bags) {
    if (bag.size() == 0) throw EmptyBagError("bag '" + bag.bag_id + "' has no instances");
    if (bag.X.cols() != width) {
      throw DimensionError("bag '" + bag.bag_id + "' has " + std::to_string(bag.X.cols()) +
                           " features per instance, expected " + std::to_string(width));
    }
    if (bag.label >= classes) {
      throw ConfigError("bag '" + bag.bag_id + "' has label " + std::to_string(bag.label) +
                        " but the model has " + std::to_string(classes) + " classes");
    }
  }
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxFile parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("IDX: stream shorter than the 4-byte magic");
  IdxFile file;
  file.magic = read_be32(bytes, 0);
  if (file.magic != IdxFile::kImageMagic && file.magic != IdxFile::kLabelMagic) {
    std::array<char, 16> hex{};
    std::snprintf(hex.data(), hex.size(), "0x%08X", file.magic);
    throw FormatError(std::string("IDX: unsupported magic ") + hex.data() +
                      " (expected 0x00000801 or 0x00000803)");
  }
  const std::size_t ndims = file.magic & 0xFF;
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw FormatError("IDX: header needs " + std::to_string(header) + " bytes, stream has " +
                      std::to_string(bytes.size()));
  }
  std::size_t expected = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    file.dims.push_back(read_be32(bytes, 4 + 4 * i));
    expected *= file.dims.back();
  }
  const std::size_t available = bytes.size() - header;
  if (available != expected) {
    throw FormatError("IDX: payload length " + std::to_string(available) +
                      " does not match dimension product " + std::to_string(expected));
  }
  file.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return file;
}

IdxFile read_idx(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_idx(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_idx(const IdxFile& file) {
  std::vector<std::uint8_t> out;
  write_be32(out, file.magic);
  for (std::uint32_t d : file.dims) write_be32(out, d);
  out.insert(out.end(), file.payload.begin(), file.payload.end());
  return out;
}

MnistSplit make_split(const IdxFile& images, const IdxFile& labels) {
  if (images.magic != IdxFile::kImageMagic || images.dims.size() != 3) {
    throw FormatError("expected a 3-D IDX image file");
  }
  if (labels.magic != IdxFile::kLabelMagic || labels.dims.size() != 1) {
    throw FormatError("expected a 1-D IDX label file");
  }
  if (images.dims[0] != labels.dims[0]) {
    throw FormatError("image count " + std::to_string(images.dims[0]) +
                      " does not match label count " + std::to_string(labels.dims[0]));
  }
  MnistSplit split;
  split.count = images.dims[0];
  split.rows = images.dims[1];
  split.cols = images.dims[2];
  split.pixels = images.payload;
  split.labels = labels.payload;
  return split;
}

MnistData load_mnist(const fs::path& dir) {
  MnistData data;
  data.train = make_split(read_idx(dir / "train-images-idx3-ubyte"),
                          read_idx(dir / "train-labels-idx1-ubyte"));
  data.test = make_split(read_idx(dir / "t10k-images-idx3-ubyte"),
                         read_idx(dir / "t10k-labels-idx1-ubyte"));
  return data;
}

Tensor image_to_instance(std::span<const std::uint8_t> image) {
  Tensor t(1, image.size());
  for (std::size_t i = 0; i < image.size(); ++i) t[i] = static_cast<double>(image[i]) / 255.0;
  return t;
}

// ---------------------------------------------------------------------------
// Soft bags

std::size_t SoftBagConfig::positive_keys() const {
  return static_cast<std::size_t>(std::lround(p_pos * static_cast<double>(bag_size)));
}

std::size_t SoftBagConfig::negative_keys() const {
  return static_cast<std::size_t>(std::lround(p_neg * static_cast<double>(bag_size)));
}

void SoftBagConfig::validate() const {
  if (!(p_pos >= 0.0 && p_pos <= 1.0) || !(p_neg >= 0.0 && p_neg <= 1.0)) {
    throw ConfigError("dataset.p_pos and dataset.p_neg must lie in [0, 1]");
  }
  if (!(p_pos > p_neg)) throw ConfigError("dataset.p_pos must exceed dataset.p_neg");
  if (bag_size < 1) throw ConfigError("dataset.bag_size must be >= 1");
  if (positive_keys() <= negative_keys()) {
    throw ConfigError("p_pos and p_neg give the same key count per bag (" +
                      std::to_string(positive_keys()) + "); bags would be indistinguishable");
  }
  if (key_digit > 9) throw ConfigError("dataset.key_digit must be 0..9");
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    throw ConfigError("dataset.n_train, n_val and n_test must be >= 1");
  }
}

namespace {

struct Pools {
  std::vector<std::size_t> key;
  std::vector<std::size_t> other;
};

Pools partition(const MnistSplit& split, std::uint8_t key_digit) {
  Pools p;
  for (std::size_t i = 0; i < split.count; ++i)
    (split.labels[i] == key_digit ? p.key : p.other).push_back(i);
  return p;
}

// k distinct draws from pool, by rejection (k is tiny next to the pool).
void draw_distinct(Rng& rng, const std::vector<std::size_t>& pool, std::size_t k,
                   std::vector<std::size_t>& out) {
  const std::size_t start = out.size();
  while (out.size() - start < k) {
    const std::size_t pick = pool[rng.index(pool.size())];
    if (std::find(out.begin() + static_cast<std::ptrdiff_t>(start), out.end(), pick) == out.end())
      out.push_back(pick);
  }
}

BagSet build_split(const SoftBagConfig& cfg, const MnistSplit& split, const Pools& pools,
                   std::size_t count, const std::string& name, const std::string& source,
                   Rng& rng) {
  const std::size_t most_keys = std::max(cfg.positive_keys(), cfg.negative_keys());
  const std::size_t most_other = cfg.bag_size - std::min(cfg.positive_keys(), cfg.negative_keys());
  if (pools.key.size() < most_keys) {
    throw ConfigError(name + ": need " + std::to_string(most_keys) + " key-digit images per bag, pool has " +
                      std::to_string(pools.key.size()) + " (short by " +
                      std::to_string(most_keys - pools.key.size()) + ")");
  }
  if (pools.other.size() < most_other) {
    throw ConfigError(name + ": need " + std::to_string(most_other) +
                      " non-key images per bag, pool has " + std::to_string(pools.other.size()) +
                      " (short by " + std::to_string(most_other - pools.other.size()) + ")");
  }
  const std::size_t pixels = split.rows * split.cols;
  BagSet bags;
  bags.reserve(count);
  for (std::size_t b = 0; b < count; ++b) {
    const bool positive = b % 2 == 0;
    const std::size_t keys = positive ? cfg.positive_keys() : cfg.negative_keys();
    std::vector<std::size_t> members;
    draw_distinct(rng, pools.key, keys, members);
    draw_distinct(rng, pools.other, cfg.bag_size - keys, members);
    rng.shuffle(std::span<std::size_t>(members));

    Bag bag;
    char id[32];
    std::snprintf(id, sizeof id, "%s_%04zu", name.c_str(), b);
    bag.bag_id = id;
    bag.label = positive ? 1 : 0;
    bag.X = Tensor(members.size(), pixels);
    for (std::size_t r = 0; r < members.size(); ++r) {
      const auto image = split.image(members[r]);
      for (std::size_t c = 0; c < pixels; ++c) bag.X(r, c) = static_cast<double>(image[c]) / 255.0;
      bag.instance_ids.push_back(source + ":" + std::to_string(members[r]));
    }
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace

BagSplits make_soft_bags(const SoftBagConfig& config, const MnistData& data) {
  config.validate();
  const Pools train_pools = partition(data.train, config.key_digit);
  const Pools test_pools = partition(data.test, config.key_digit);
  Rng rng(config.seed, 0x50f7);
  BagSplits out;
  out.train = build_split(config, data.train, train_pools, config.n_train, "train", "train", rng);
  out.val = build_split(config, data.train, train_pools, config.n_val, "val", "train", rng);
  out.test = build_split(config, data.test, test_pools, config.n_test, "test", "test", rng);
  return out;
}

// ---------------------------------------------------------------------------
// Feature bags

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string where(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

Tensor read_bag_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open bag file " + path.string());
  std::vector<double> values;
  std::size_t width = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    const auto cells = split_commas(text);
    if (rows == 0) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw FormatError(where(path, line_no) + ": ragged row with " + std::to_string(cells.size()) +
                        " columns, expected " + std::to_string(width));
    }
    for (std::string_view cell : cells) {
      cell = trim(cell);
      double v = 0.0;
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || end != cell.data() + cell.size() || cell.empty()) {
        throw FormatError(where(path, line_no) + ": non-numeric cell '" + std::string(cell) + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw EmptyBagError(path.string() + ": bag file has no instances");
  return {rows, width, std::move(values)};
}

}  // namespace

BagSet load_feature_bags(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::string line;
  std::size_t line_no = 0;
  BagSet bags;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    const auto cells = split_commas(text);
    if (!header_seen) {
      if (cells.size() != 3 || trim(cells[0]) != "bag_id" || trim(cells[1]) != "path" ||
          trim(cells[2]) != "label") {
        throw FormatError(where(manifest, line_no) + ": expected header 'bag_id,path,label'");
      }
      header_seen = true;
      continue;
    }
    if (cells.size() != 3) {
      throw FormatError(where(manifest, line_no) + ": expected 3 columns, found " +
                        std::to_string(cells.size()));
    }
    Bag bag;
    bag.bag_id = std::string(trim(cells[0]));
    const std::string_view label = trim(cells[2]);
    const auto [end, ec] = std::from_chars(label.data(), label.data() + label.size(), bag.label);
    if (ec != std::errc() || end != label.data() + label.size() || label.empty()) {
      throw FormatError(where(manifest, line_no) + ": label '" + std::string(label) +
                        "' is not a class index");
    }
    const fs::path file = base / std::string(trim(cells[1]));
    if (!fs::exists(file)) {
      throw FormatError(where(manifest, line_no) + ": bag file " + file.string() + " does not exist");
    }
    bag.X = read_bag_file(file);
    if (!bags.empty() && bag.X.cols() != bags.front().X.cols()) {
      throw FormatError(where(manifest, line_no) + ": bag '" + bag.bag_id + "' has width " +
                        std::to_string(bag.X.cols()) + ", earlier bags have " +
                        std::to_string(bags.front().X.cols()));
    }
    for (std::size_t r = 0; r < bag.X.rows(); ++r) bag.instance_ids.push_back(std::to_string(r));
    bags.push_back(std::move(bag));
  }
  if (!header_seen) throw FormatError(manifest.string() + ": empty manifest");
  return bags;
}

void write_feature_bags(const BagSet& bags, const fs::path& manifest, const std::string& bag_dir) {
  const fs::path base = manifest.parent_path();
  fs::create_directories(base / bag_dir);
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw FormatError("cannot write manifest " + manifest.string());
  out << "bag_id,path,label\n";
  std::array<char, 32> buf{};
  for (const Bag& bag : bags) {
    const std::string rel = bag_dir + "/" + bag.bag_id + ".csv";
    out << bag.bag_id << ',' << rel << ',' << bag.label << '\n';
    std::ofstream file(base / rel, std::ios::binary);
    if (!file) throw FormatError("cannot write bag file " + (base / rel).string());
    std::string text;
    for (std::size_t r = 0; r < bag.X.rows(); ++r) {
      for (std::size_t c = 0; c < bag.X.cols(); ++c) {
        if (c) text.push_back(',');
        const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), bag.X(r, c));
        text.append(buf.data(), res.ptr);
      }
      text.push_back('\n');
    }
    file << text;
  }
}

}  // namespace madmil
