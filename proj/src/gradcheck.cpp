#include "madmil/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "madmil/error.hpp"

namespace madmil {

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step) {
  Tensor probe = x;
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = f(probe);
    probe[i] = original - step;
    const double down = f(probe);
    probe[i] = original;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

GradientComparison compare_gradients(const Tensor& analytic, const Tensor& numeric,
                                     double relative_tolerance, double absolute_tolerance) {
  if (!analytic.same_shape(numeric)) {
    throw DimensionError("compare_gradients: " + analytic.shape_string() + " vs " +
                         numeric.shape_string());
  }
  GradientComparison result;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double abs_err = std::abs(analytic[i] - numeric[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
    const bool ok = rel_err < relative_tolerance || abs_err < absolute_tolerance;
    if (!ok) result.passed = false;
    if (abs_err > result.max_absolute_error) {
      result.max_absolute_error = abs_err;
      result.worst_index = i;
    }
    // Relative error is only meaningful where the absolute escape does not apply.
    if (abs_err >= absolute_tolerance) result.max_relative_error = std::max(result.max_relative_error, rel_err);
  }
  return result;
}

}  // namespace madmil
