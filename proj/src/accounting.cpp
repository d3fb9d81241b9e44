#include "madmil/accounting.hpp"

#include <array>
#include <cstdio>

#include "madmil/error.hpp"

namespace madmil {

std::uint64_t param_count(const ModelConfig& config) {
  config.validate();
  const std::uint64_t in = config.input_dim;
  const std::uint64_t D = config.embed_dim;
  const std::uint64_t C = config.classes;
  const std::uint64_t d = config.head_width();
  const std::uint64_t a = config.head_hidden();
  const std::uint64_t per_head = 2 * (d * a + a) + a + 1;
  return in * D + D + config.head_count() * per_head + config.output_width() * C + C;
}

std::uint64_t flops(const ModelConfig& config, std::size_t instances) {
  config.validate();
  if (instances < 1) throw ConfigError("flops: instances per bag must be >= 1");
  const std::uint64_t N = instances;
  const std::uint64_t d = config.head_width();
  const std::uint64_t a = config.head_hidden();
  const std::uint64_t per_head = 2 * d * a + a;
  return N * config.input_dim * config.embed_dim + N * config.head_count() * per_head +
         config.output_width() * config.classes;
}

namespace {

std::string one_decimal(double value, const char* unit) {
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "%.1f %s", value, unit);
  return buf.data();
}

struct ReferenceRow {
  Aggregator aggregator;
  std::size_t input_dim, embed_dim, heads, classes;
  ReferenceFigures figures;
};

// clang-format off
constexpr std::array kReference{
    // MNIST-BAGS models (784 -> 128)
    ReferenceRow{Aggregator::abmil,     784,  128, 1, 2, {167.1, 19.9}},
    ReferenceRow{Aggregator::madmil,    784,  128, 4, 2, {105.1, 12.5}},
    ReferenceRow{Aggregator::madmil,    784,  128, 6, 2, {107.1, 12.7}},
    ReferenceRow{Aggregator::madmil,    784,  128, 7, 2, {107.2, 12.8}},
    ReferenceRow{Aggregator::mean_pool, 784,  128, 1, 2, {100.8, 12.0}},
    ReferenceRow{Aggregator::max_pool,  784,  128, 1, 2, {100.8, 12.0}},
    // WSI feature models (1024 -> 512)
    ReferenceRow{Aggregator::abmil,     1024, 512, 1, 2, {788.7, 94.4}},
    ReferenceRow{Aggregator::madmil,    1024, 512, 3, 2, {614.8, 73.5}},
    ReferenceRow{Aggregator::madmil,    1024, 512, 2, 2, {657.6, 78.6}},
    ReferenceRow{Aggregator::madmil,    1024, 512, 8, 2, {559.3, 66.8}},
    ReferenceRow{Aggregator::madmil,    1024, 512, 5, 3, {582.7, 69.6}},
    ReferenceRow{Aggregator::mean_pool, 1024, 512, 1, 2, {525.8, 62.9}},
    ReferenceRow{Aggregator::max_pool,  1024, 512, 1, 2, {525.8, 62.9}},
};
// clang-format on

}  // namespace

std::string format_thousands(std::uint64_t value) {
  return one_decimal(static_cast<double>(value) / 1e3, "K");
}

std::string format_millions(std::uint64_t value) {
  return one_decimal(static_cast<double>(value) / 1e6, "M");
}

std::optional<ReferenceFigures> reference_figures(const ModelConfig& config) {
  if (config.attention_hidden) return std::nullopt;
  const std::size_t heads = config.uses_attention() ? config.heads : 1;
  for (const auto& row : kReference) {
    if (row.aggregator == config.aggregator && row.input_dim == config.input_dim &&
        row.embed_dim == config.embed_dim && row.heads == heads && row.classes == config.classes) {
      return row.figures;
    }
  }
  return std::nullopt;
}

}  // namespace madmil
