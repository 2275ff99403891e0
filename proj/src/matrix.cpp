#include "flashattn/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "flashattn/errors.hpp"

namespace flashattn {
namespace {

void check_block(std::size_t rows, std::size_t cols, std::size_t r0, std::size_t c0, std::size_t nr,
                 std::size_t nc) {
  if (r0 + nr > rows || c0 + nc > cols) {
    throw IndexError("block [" + std::to_string(r0) + "+" + std::to_string(nr) + ", " + std::to_string(c0) + "+" +
                     std::to_string(nc) + ") exceeds " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

std::size_t prefix_len(std::span<const std::size_t> row_len, std::size_t r, std::size_t full) noexcept {
  return row_len.empty() ? full : std::min(row_len[r], full);
}

std::uint64_t prefix_total(std::span<const std::size_t> row_len, std::size_t rows, std::size_t full) noexcept {
  std::uint64_t total = 0;
  for (std::size_t r = 0; r < rows; ++r) total += prefix_len(row_len, r, full);
  return total;
}

void check_row_len(std::span<const std::size_t> row_len, std::size_t rows) {
  if (!row_len.empty() && row_len.size() != rows) throw DimensionError("row_len length does not match row count");
}

}  // namespace

ConstMatrixView ConstMatrixView::block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
  check_block(rows_, cols_, r0, c0, nr, nc);
  return {data_ + r0 * stride_ + c0, nr, nc, stride_};
}

MatrixView MatrixView::block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
  check_block(rows_, cols_, r0, c0, nr, nc);
  return {data_ + r0 * stride_ + c0, nr, nc, stride_};
}

void MatrixView::fill(double value) const noexcept {
  for (std::size_t r = 0; r < rows_; ++r) std::ranges::fill(row(r), value);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged initializer for Matrix");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix to_matrix(ConstMatrixView view) {
  Matrix out(view.rows(), view.cols());
  for (std::size_t r = 0; r < view.rows(); ++r) std::ranges::copy(view.row(r), out.row(r).begin());
  return out;
}

Matrix transpose(ConstMatrixView m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

RowVector rowmax(ConstMatrixView m) {
  if (m.empty()) throw DimensionError("rowmax of an empty matrix");
  RowVector out(m.rows(), kNegInf);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (double x : m.row(r)) out[r] = std::max(out[r], x);
  return out;
}

RowVector rowsum(ConstMatrixView m) {
  if (m.empty()) throw DimensionError("rowsum of an empty matrix");
  RowVector out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (double x : m.row(r)) acc += x;
    out[r] = acc;
  }
  return out;
}

Matrix matmul(ConstMatrixView a, ConstMatrixView b, bool transpose_b, CostCounters& counters) {
  const std::size_t inner_b = transpose_b ? b.cols() : b.rows();
  if (a.cols() != inner_b) {
    throw DimensionError("matmul inner dimension mismatch: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " times " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + (transpose_b ? "^T" : ""));
  }
  Matrix c(a.rows(), transpose_b ? b.rows() : b.cols());
  if (transpose_b) {
    gemm::nt(c.view(), a, b, {}, counters);
  } else {
    gemm::nn_acc(c.view(), a, b, {}, counters);
  }
  return c;
}

double max_abs_diff(ConstMatrixView a, ConstMatrixView b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("max_abs_diff shape mismatch");
  double worst = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const double diff = std::abs(a(r, c) - b(r, c));
      if (std::isnan(diff)) return diff;
      worst = std::max(worst, diff);
    }
  return worst;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - b[i]);
    if (std::isnan(diff)) return diff;
    worst = std::max(worst, diff);
  }
  return worst;
}

void round_to_reduced(MatrixView m) noexcept {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (double& x : m.row(r)) x = to_reduced(x);
}

void round_to_reduced(std::span<double> v) noexcept {
  for (double& x : v) x = to_reduced(x);
}

namespace gemm {
namespace {

// Register tiles of kRows x kWidth outputs. Every output element still sums
// its products in ascending reduction order, so tiled and untiled results
// are bitwise identical.
using Lanes = double __attribute__((vector_size(64)));
constexpr std::size_t kLanes = sizeof(Lanes) / sizeof(double);
constexpr std::size_t kRows = 6;
constexpr std::size_t kVecs = 2;
constexpr std::size_t kWidth = kVecs * kLanes;

inline Lanes load(const double* p) {
  Lanes v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store(double* p, Lanes v) { std::memcpy(p, &v, sizeof(v)); }

// out[rr][j0 + jj] (=|+=) sum_{kk in [k0, k1)} a[rr][kk] * b[kk][j0 + jj]
template <bool kAccumulate>
void tile(double* const* out, const double* const* a, const double* b, std::size_t ldb, std::size_t k0,
          std::size_t k1, std::size_t j0) {
  Lanes acc[kRows][kVecs];
  for (std::size_t rr = 0; rr < kRows; ++rr)
    for (std::size_t v = 0; v < kVecs; ++v) acc[rr][v] = kAccumulate ? load(out[rr] + j0 + v * kLanes) : Lanes{};
  for (std::size_t kk = k0; kk < k1; ++kk) {
    const double* brow = b + kk * ldb + j0;
    Lanes bv[kVecs];
    for (std::size_t v = 0; v < kVecs; ++v) bv[v] = load(brow + v * kLanes);
    for (std::size_t rr = 0; rr < kRows; ++rr) {
      const double av = a[rr][kk];
      for (std::size_t v = 0; v < kVecs; ++v) acc[rr][v] += av * bv[v];
    }
  }
  for (std::size_t rr = 0; rr < kRows; ++rr)
    for (std::size_t v = 0; v < kVecs; ++v) store(out[rr] + j0 + v * kLanes, acc[rr][v]);
}

}  // namespace

void nt(MatrixView c, ConstMatrixView a, ConstMatrixView b, std::span<const std::size_t> row_len,
        CostCounters& counters) {
  if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows())
    throw DimensionError("gemm::nt shape mismatch");
  check_row_len(row_len, c.rows());
  const std::size_t m = a.rows();
  const std::size_t n = b.rows();
  const std::size_t k = a.cols();

  // b^T laid out contiguously so the inner loop runs over output columns.
  Storage bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t kk = 0; kk < k; ++kk) bt[kk * n + j] = b(j, kk);

  // Columns below `from` of rows [r, r + count) are already done.
  auto rows_scalar = [&](std::size_t r, std::size_t count, std::size_t from) {
    for (std::size_t rr = r; rr < r + count; ++rr) {
      const std::size_t len = prefix_len(row_len, rr, n);
      if (len <= from) continue;
      double* out = &c(rr, 0);
      std::fill(out + from, out + len, 0.0);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = a(rr, kk);
        const double* brow = bt.data() + kk * n;
        for (std::size_t j = from; j < len; ++j) out[j] += av * brow[j];
      }
    }
  };

  std::size_t r = 0;
  for (; r + kRows <= m; r += kRows) {
    double* out[kRows];
    const double* arow[kRows];
    std::size_t common = n;
    for (std::size_t rr = 0; rr < kRows; ++rr) {
      out[rr] = &c(r + rr, 0);
      arow[rr] = &a(r + rr, 0);
      common = std::min(common, prefix_len(row_len, r + rr, n));
    }
    std::size_t j0 = 0;
    for (; j0 + kWidth <= common; j0 += kWidth) tile<false>(out, arow, bt.data(), n, 0, k, j0);
    rows_scalar(r, kRows, j0);
  }
  rows_scalar(r, m - r, 0);
  counters.matmul_flops += 2 * k * prefix_total(row_len, m, n);
}

void nn_acc(MatrixView c, ConstMatrixView a, ConstMatrixView b, std::span<const std::size_t> row_len,
            CostCounters& counters) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
    throw DimensionError("gemm::nn_acc shape mismatch");
  check_row_len(row_len, c.rows());
  const std::size_t m = a.rows();
  const std::size_t n = b.cols();
  const std::size_t k = a.cols();
  const double* bdata = b.rows() == 0 ? nullptr : &b(0, 0);
  const std::size_t ldb = b.stride();

  // Reduction terms [from, len) for every column, and [0, from) for columns
  // at or past `col_from`, of rows [r, r + count).
  auto rows_scalar = [&](std::size_t r, std::size_t count, std::size_t from, std::size_t col_from) {
    for (std::size_t rr = r; rr < r + count; ++rr) {
      const std::size_t len = prefix_len(row_len, rr, k);
      double* out = &c(rr, 0);
      for (std::size_t j = col_from; j < n; ++j)
        for (std::size_t kk = 0; kk < from; ++kk) out[j] += a(rr, kk) * bdata[kk * ldb + j];
      for (std::size_t kk = from; kk < len; ++kk) {
        const double av = a(rr, kk);
        const double* brow = bdata + kk * ldb;
        for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
      }
    }
  };

  std::size_t r = 0;
  for (; r + kRows <= m; r += kRows) {
    double* out[kRows];
    const double* arow[kRows];
    std::size_t common = k;
    for (std::size_t rr = 0; rr < kRows; ++rr) {
      out[rr] = &c(r + rr, 0);
      arow[rr] = &a(r + rr, 0);
      common = std::min(common, prefix_len(row_len, r + rr, k));
    }
    std::size_t j0 = 0;
    for (; j0 + kWidth <= n; j0 += kWidth) tile<true>(out, arow, bdata, ldb, 0, common, j0);
    rows_scalar(r, kRows, common, j0);
  }
  rows_scalar(r, m - r, 0, 0);
  counters.matmul_flops += 2 * n * prefix_total(row_len, m, k);
}

void tn_acc(MatrixView c, ConstMatrixView a, ConstMatrixView b, std::span<const std::size_t> row_len,
            CostCounters& counters) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols())
    throw DimensionError("gemm::tn_acc shape mismatch");
  check_row_len(row_len, a.rows());
  const std::size_t m = a.rows();
  const std::size_t n = b.cols();
  const std::size_t k = a.cols();

  if (!row_len.empty() || m == 0) {
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t len = prefix_len(row_len, r, k);
      const double* brow = &b(r, 0);
      for (std::size_t kk = 0; kk < len; ++kk) {
        const double av = a(r, kk);
        double* out = &c(kk, 0);
        for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
      }
    }
    counters.matmul_flops += 2 * n * prefix_total(row_len, m, k);
    return;
  }

  // a^T laid out contiguously; the reduction then runs down rows of a.
  Storage at(k * m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t kk = 0; kk < k; ++kk) at[kk * m + r] = a(r, kk);
  const double* bdata = &b(0, 0);
  const std::size_t ldb = b.stride();

  std::size_t kk = 0;
  for (; kk + kRows <= k; kk += kRows) {
    double* out[kRows];
    const double* arow[kRows];
    for (std::size_t rr = 0; rr < kRows; ++rr) {
      out[rr] = &c(kk + rr, 0);
      arow[rr] = at.data() + (kk + rr) * m;
    }
    std::size_t j0 = 0;
    for (; j0 + kWidth <= n; j0 += kWidth) tile<true>(out, arow, bdata, ldb, 0, m, j0);
    for (std::size_t rr = 0; rr < kRows; ++rr)
      for (std::size_t j = j0; j < n; ++j)
        for (std::size_t r = 0; r < m; ++r) out[rr][j] += arow[rr][r] * bdata[r * ldb + j];
  }
  for (; kk < k; ++kk) {
    double* out = &c(kk, 0);
    for (std::size_t r = 0; r < m; ++r) {
      const double av = a(r, kk);
      for (std::size_t j = 0; j < n; ++j) out[j] += av * bdata[r * ldb + j];
    }
  }
  counters.matmul_flops += 2 * n * prefix_total(row_len, m, k);
}

}  // namespace gemm
}  // namespace flashattn
