#include "flashattn/reference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flashattn/errors.hpp"

namespace flashattn {
namespace {

void check_qkv(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionConfig& cfg) {
  cfg.validate();
  const auto n = cfg.seq_len;
  const auto d = cfg.head_dim;
  for (const Matrix* m : {&q, &k, &v}) {
    if (m->rows() != n || m->cols() != d)
      throw DimensionError("naive attention: expected " + std::to_string(n) + "x" + std::to_string(d) + " input, got " +
                           std::to_string(m->rows()) + "x" + std::to_string(m->cols()));
  }
}

}  // namespace

Matrix softmax_rows(ConstMatrixView s) {
  if (s.empty()) throw DimensionError("softmax of an empty matrix");
  Matrix p(s.rows(), s.cols());
  const RowVector m = rowmax(s);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    if (m[r] == kNegInf) throw MaskedRowError("softmax: row " + std::to_string(r) + " is fully masked");
    double sum = 0.0;
    for (std::size_t c = 0; c < s.cols(); ++c) {
      p(r, c) = std::exp(s(r, c) - m[r]);
      sum += p(r, c);
    }
    for (double& x : p.row(r)) x /= sum;
  }
  return p;
}

Matrix unshifted_softmax_rows_f32(ConstMatrixView s) {
  Matrix p(s.rows(), s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    float sum = 0.0f;
    for (std::size_t c = 0; c < s.cols(); ++c) sum += std::exp(static_cast<float>(s(r, c)));
    for (std::size_t c = 0; c < s.cols(); ++c) p(r, c) = std::exp(static_cast<float>(s(r, c))) / sum;
  }
  return p;
}

NaiveForwardResult attention_forward_naive(const Matrix& q, const Matrix& k, const Matrix& v,
                                           const AttentionConfig& cfg, CostCounters& counters) {
  check_qkv(q, k, v, cfg);
  const std::uint64_t n = cfg.seq_len;
  const std::uint64_t d = cfg.head_dim;
  const double scale = cfg.scale();

  // Phase 1: S = scale * Q K^T, written to HBM.
  NaiveForwardResult out;
  out.s = matmul(q, k, /*transpose_b=*/true, counters);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.s(i, j) = (cfg.causal && j > i) ? kNegInf : scale * out.s(i, j);
  counters.nonmatmul_flops += n * n;
  counters.hbm_reads += 2 * n * d;
  counters.hbm_writes += n * n;

  // Phase 2: P = softmax(S): read S, write P.
  out.p = softmax_rows(out.s);
  counters.nonmatmul_flops += 5 * n * n;  // max, subtract, exp, sum, divide
  counters.hbm_reads += n * n;
  counters.hbm_writes += n * n;

  // Phase 3: O = P V.
  out.o = matmul(out.p, v, /*transpose_b=*/false, counters);
  counters.hbm_reads += n * n + n * d;
  counters.hbm_writes += n * d;
  return out;
}

RowVector softmax_backward_row(std::span<const double> p, std::span<const double> dp) {
  if (p.size() != dp.size())
    throw DimensionError("softmax_backward_row: length " + std::to_string(p.size()) + " vs " +
                         std::to_string(dp.size()));
  double dot = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * dp[k];
  RowVector ds(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) ds[j] = p[j] * (dp[j] - dot);
  return ds;
}

Gradients attention_backward_naive(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& p,
                                   const Matrix& d_o, const AttentionConfig& cfg, CostCounters& counters) {
  check_qkv(q, k, v, cfg);
  const std::uint64_t n = cfg.seq_len;
  const std::uint64_t d = cfg.head_dim;
  if (p.rows() != n || p.cols() != n) throw DimensionError("naive backward: P must be N x N");
  if (d_o.rows() != n || d_o.cols() != d) throw DimensionError("naive backward: dO must be N x d");
  const double scale = cfg.scale();

  Gradients g;
  g.dv = Matrix(n, d);
  gemm::tn_acc(g.dv.view(), p, d_o, {}, counters);
  counters.hbm_reads += n * n + n * d;
  counters.hbm_writes += n * d;

  const Matrix dp = matmul(d_o, v, /*transpose_b=*/true, counters);
  counters.hbm_reads += 2 * n * d;
  counters.hbm_writes += n * n;

  Matrix ds(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const RowVector row = softmax_backward_row(p.row(i), dp.row(i));
    for (std::size_t j = 0; j < n; ++j) ds(i, j) = scale * row[j];
  }
  counters.nonmatmul_flops += 5 * n * n;  // p*dp, sum, subtract, multiply, scale
  counters.hbm_reads += 2 * n * n;
  counters.hbm_writes += n * n;

  g.dq = matmul(ds, k, /*transpose_b=*/false, counters);
  counters.hbm_reads += n * n + n * d;
  counters.hbm_writes += n * d;

  g.dk = Matrix(n, d);
  gemm::tn_acc(g.dk.view(), ds, q, {}, counters);
  counters.hbm_reads += n * n + n * d;
  counters.hbm_writes += n * d;
  return g;
}

}  // namespace flashattn
