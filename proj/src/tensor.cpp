#include "madmil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "madmil/error.hpp"

namespace madmil {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return {r, c, std::move(data)};
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

Tensor Tensor::transposed() const {
  Tensor out(cols_, rows_);
  constexpr std::size_t kTile = 16;
  for (std::size_t r0 = 0; r0 < rows_; r0 += kTile)
    for (std::size_t c0 = 0; c0 < cols_; c0 += kTile) {
      const std::size_t r1 = std::min(rows_, r0 + kTile), c1 = std::min(cols_, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out.data_[c * rows_ + r] = data_[r * cols_ + c];
    }
  return out;
}

Tensor Tensor::select_rows(std::span<const std::size_t> order) const {
  Tensor out(order.size(), cols_);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= rows_) throw DimensionError("row index out of range in select_rows");
    std::copy_n(row(order[i]).begin(), cols_, out.row(i).begin());
  }
  return out;
}

Tensor Tensor::slice_columns(std::size_t begin, std::size_t end) const {
  if (begin > end || end > cols_) {
    throw DimensionError("column slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_string());
  }
  Tensor out(rows_, end - begin);
  for (std::size_t r = 0; r < rows_; ++r)
    std::copy(row(r).begin() + static_cast<std::ptrdiff_t>(begin),
              row(r).begin() + static_cast<std::ptrdiff_t>(end), out.row(r).begin());
  return out;
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_difference: " + a.shape_string() + " vs " + b.shape_string());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

namespace kernels {
namespace {

void check_out(const Tensor& out, std::size_t rows, std::size_t cols, const char* what) {
  if (out.rows() != rows || out.cols() != cols) {
    throw DimensionError(std::string(what) + ": output has shape " + out.shape_string() +
                         ", expected [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
}

}  // namespace

// Loop orders keep the innermost loop contiguous in both `b` and `out` so the
// compiler can vectorize without reassociating any sum.

void matmul(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_string() + " x " +
                         b.shape_string());
  }
  check_out(out, a.rows(), b.cols(), "matmul");
  if (!accumulate) std::fill(out.values().begin(), out.values().end(), 0.0);
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      const double* src = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) dst[j] += s * src[j];
    }
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_string() + "ᵀ x " +
                         b.shape_string());
  }
  check_out(out, a.cols(), b.cols(), "matmul_tn");
  if (!accumulate) std::fill(out.values().begin(), out.values().end(), 0.0);
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* src = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = a(k, i);
      if (s == 0.0) continue;
      double* dst = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) dst[j] += s * src[j];
    }
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_string() + " x " +
                         b.shape_string() + "ᵀ");
  }
  matmul(a, b.transposed(), out, accumulate);
}

}  // namespace kernels
}  // namespace madmil
