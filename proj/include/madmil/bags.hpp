#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "madmil/tensor.hpp"

namespace madmil {

/// One labelled bag: N instances of input_dim features.
struct Bag {
  std::string bag_id;
  Tensor X;  // N×input_dim
  std::size_t label = 0;
  std::vector<std::string> instance_ids;

  std::size_t size() const { return X.rows(); }
};

using BagSet = std::vector<Bag>;

/// Throws if any bag is empty, widths differ, or a label is ≥ classes.
void validate_bag_set(const BagSet& bags, std::size_t classes);

// ---------------------------------------------------------------------------
// IDX container (MNIST distribution format)

struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  static constexpr std::uint32_t kImageMagic = 0x00000803;
  static constexpr std::uint32_t kLabelMagic = 0x00000801;
};

/// Decodes a big-endian IDX stream. Only unsigned-byte payloads (type code
/// 0x08) with magic 2049 (labels) or 2051 (images) are accepted.
IdxFile parse_idx(std::span<const std::uint8_t> bytes);
IdxFile read_idx(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_idx(const IdxFile& file);

/// Images and labels from one MNIST split.
struct MnistSplit {
  std::size_t count = 0;
  std::size_t rows = 28;
  std::size_t cols = 28;
  std::vector<std::uint8_t> pixels;  // count × rows × cols
  std::vector<std::uint8_t> labels;

  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * rows * cols, rows * cols};
  }
};

MnistSplit make_split(const IdxFile& images, const IdxFile& labels);

struct MnistData {
  MnistSplit train;
  MnistSplit test;
};

/// Reads train-images-idx3-ubyte etc. from `dir`.
MnistData load_mnist(const std::filesystem::path& dir);

/// Row-major flatten, pixel/255.
Tensor image_to_instance(std::span<const std::uint8_t> image);

// ---------------------------------------------------------------------------
// Soft bags

struct SoftBagConfig {
  double p_pos = 0.4;
  double p_neg = 0.2;
  std::size_t bag_size = 20;
  std::size_t n_train = 50;
  std::size_t n_val = 100;
  std::size_t n_test = 900;
  std::uint8_t key_digit = 8;
  std::uint64_t seed = 0;

  std::size_t positive_keys() const;
  std::size_t negative_keys() const;
  void validate() const;
};

struct BagSplits {
  BagSet train;
  BagSet val;
  BagSet test;
};

/// Every positive bag holds exactly round(p_pos·bag_size) key digits, every
/// negative bag round(p_neg·bag_size); the rest are non-key digits. Each split
/// is half positive (the extra bag, if odd, is positive). Train and val bags
/// are drawn from the MNIST training split, test bags from the test split.
/// Instance ids are "<split>:<index>" into the source split.
BagSplits make_soft_bags(const SoftBagConfig& config, const MnistData& data);

// ---------------------------------------------------------------------------
// Feature bags on disk
//
// Manifest: CSV with header `bag_id,path,label`, paths relative to the
// manifest's directory. Bag file: one instance per line, comma-separated
// decimal doubles.

BagSet load_feature_bags(const std::filesystem::path& manifest);

/// Writes one CSV per bag next to the manifest (under `bag_dir`, relative to
/// the manifest directory) with shortest round-trip decimals, so reloading is
/// bit-exact.
void write_feature_bags(const BagSet& bags, const std::filesystem::path& manifest,
                        const std::string& bag_dir = "bags");

}  // namespace madmil
