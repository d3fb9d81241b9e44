#pragma once

#include <functional>

#include "madmil/tensor.hpp"

namespace madmil {

/// Central-difference gradient of a scalar function:
/// (f(x + h·e_i) − f(x − h·e_i)) / 2h for every entry i of x.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step = 1e-6);

struct GradientComparison {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

/// Entrywise comparison. An entry passes when its relative error
/// |a−n| / max(|a|,|n|) is below `relative_tolerance` or its absolute error is
/// below `absolute_tolerance` (the near-zero escape).
GradientComparison compare_gradients(const Tensor& analytic, const Tensor& numeric,
                                     double relative_tolerance = 1e-5,
                                     double absolute_tolerance = 1e-8);

}  // namespace madmil
