#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "madmil/models.hpp"

namespace madmil {

/// Trainable scalars, from the closed form:
///   compression  input_dim·D + D
///   per head     2(d·a + a) + a + 1      (V, U with biases; w; b_w)
///   classifier   D·C + C
std::uint64_t param_count(const ModelConfig& config);

/// Multiply-accumulates of the linear maps for one bag of N instances,
/// biases and nonlinearities excluded:
///   N·input_dim·D + N·Σ_heads(2·d·a + a) + D·C
std::uint64_t flops(const ModelConfig& config, std::size_t instances);

/// "788.7 K" style, value/1000 to one decimal.
std::string format_thousands(std::uint64_t value);
/// "94.4 M" style, value/10⁶ to one decimal.
std::string format_millions(std::uint64_t value);

/// Published size/FLOP figures for the standard configurations, used to flag
/// drift in the count report. Matched on every config field; N must be 120.
struct ReferenceFigures {
  double size_k;   // thousands of parameters
  double flops_m;  // millions of MACs at N = 120
};
std::optional<ReferenceFigures> reference_figures(const ModelConfig& config);

}  // namespace madmil
