#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace madmil {

/// Dense row-major matrix of doubles. Every numeric quantity in the library
/// (instance features, embeddings, weights, logits) is one of these.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Nested-list constructor, e.g. Tensor::from_rows({{1, 2}, {3, 4}}).
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros(std::size_t rows, std::size_t cols) { return {rows, cols}; }
  static Tensor ones(std::size_t rows, std::size_t cols) { return {rows, cols, 1.0}; }
  static Tensor identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  Tensor transposed() const;
  Tensor select_rows(std::span<const std::size_t> order) const;
  Tensor slice_columns(std::size_t begin, std::size_t end) const;

  double sum() const;
  bool all_finite() const;

  /// Bitwise equality of shape and contents.
  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double max_abs_difference(const Tensor& a, const Tensor& b);

// Raw kernels. `accumulate` adds into `out` instead of overwriting it; `out`
// must already have the result shape.
namespace kernels {

void matmul(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
/// out = aᵀ · b
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
/// out = a · bᵀ
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);

}  // namespace kernels

}  // namespace madmil
