#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

#include "flashattn/counters.hpp"
#include "flashattn/memory_tracker.hpp"

namespace flashattn {

using Storage = std::vector<double, TrackingAllocator<double>>;

/// Mask sentinel. e^{-inf} == 0 exactly.
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class ConstMatrixView {
 public:
  ConstMatrixView() = default;
  ConstMatrixView(const double* data, std::size_t rows, std::size_t cols, std::size_t stride) noexcept
      : data_(data), rows_(rows), cols_(cols), stride_(stride) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t stride() const noexcept { return stride_; }
  bool empty() const noexcept { return rows_ == 0 || cols_ == 0; }

  const double& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * stride_ + c]; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_ + r * stride_, cols_}; }

  /// Sub-block [r0, r0+nr) x [c0, c0+nc); aliases this view's storage.
  ConstMatrixView block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;

 private:
  const double* data_ = nullptr;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t stride_ = 0;
};

class MatrixView {
 public:
  MatrixView() = default;
  MatrixView(double* data, std::size_t rows, std::size_t cols, std::size_t stride) noexcept
      : data_(data), rows_(rows), cols_(cols), stride_(stride) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t stride() const noexcept { return stride_; }
  bool empty() const noexcept { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * stride_ + c]; }
  std::span<double> row(std::size_t r) const noexcept { return {data_ + r * stride_, cols_}; }

  MatrixView block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;
  void fill(double value) const noexcept;

  operator ConstMatrixView() const noexcept { return {data_, rows_, cols_, stride_}; }

 private:
  double* data_ = nullptr;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t stride_ = 0;
};

class RowVector {
 public:
  RowVector() = default;
  explicit RowVector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  RowVector(std::initializer_list<double> values) : data_(values) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  operator std::span<const double>() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const RowVector&, const RowVector&) = default;

 private:
  Storage data_;
};

/// Dense row-major matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  MatrixView view() noexcept { return {data_.data(), rows_, cols_, cols_}; }
  ConstMatrixView view() const noexcept { return {data_.data(), rows_, cols_, cols_}; }
  operator ConstMatrixView() const noexcept { return view(); }

  MatrixView block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) {
    return view().block(r0, c0, nr, nc);
  }
  ConstMatrixView block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
    return view().block(r0, c0, nr, nc);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage data_;
};

Matrix to_matrix(ConstMatrixView view);
Matrix transpose(ConstMatrixView m);

RowVector rowmax(ConstMatrixView m);
RowVector rowsum(ConstMatrixView m);

/// a * b (or a * b^T). Counts 2*m*n*k matmul FLOPs. Per element the inner
/// products accumulate in ascending k order starting from zero, so the result
/// matches a plain triple loop bit for bit.
Matrix matmul(ConstMatrixView a, ConstMatrixView b, bool transpose_b, CostCounters& counters);

/// Largest absolute element-wise difference.
double max_abs_diff(ConstMatrixView a, ConstMatrixView b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

/// Rounds to the nearest 32-bit real and back.
inline double to_reduced(double x) noexcept { return static_cast<double>(static_cast<float>(x)); }
void round_to_reduced(MatrixView m) noexcept;
void round_to_reduced(std::span<double> v) noexcept;

/// Block matrix products used by the tiled kernels. `row_len`, when
/// non-empty, limits row r of the masked operand to its first row_len[r]
/// columns (the unmasked prefix of a causal block); structurally masked
/// terms are neither computed nor counted.
namespace gemm {

/// c[r][j] = sum_k a[r][k] * b[j][k] for j < row_len[r]. Entries past the
/// prefix are left untouched.
void nt(MatrixView c, ConstMatrixView a, ConstMatrixView b, std::span<const std::size_t> row_len,
        CostCounters& counters);

/// c[r][:] += sum_{k < row_len[r]} a[r][k] * b[k][:].
void nn_acc(MatrixView c, ConstMatrixView a, ConstMatrixView b, std::span<const std::size_t> row_len,
            CostCounters& counters);

/// c[k][:] += sum_{r : k < row_len[r]} a[r][k] * b[r][:]  (c += a^T b).
void tn_acc(MatrixView c, ConstMatrixView a, ConstMatrixView b, std::span<const std::size_t> row_len,
            CostCounters& counters);

}  // namespace gemm
}  // namespace flashattn
