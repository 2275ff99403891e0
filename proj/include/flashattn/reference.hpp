#pragma once

#include <span>

#include "flashattn/config.hpp"
#include "flashattn/counters.hpp"
#include "flashattn/matrix.hpp"

// Materializing attention. Serves as the ground-truth oracle for the tiled
// kernels and as the "standard implementation" baseline for traffic
// comparisons. Always runs in 64-bit regardless of cfg.accum_precision.

namespace flashattn {

struct NaiveForwardResult {
  Matrix o;  // N x d
  Matrix s;  // N x N scaled (and masked) logits
  Matrix p;  // N x N row-stochastic
};

/// S = scale * Q K^T with S[i][j] = -inf for j > i when causal, P = row
/// softmax(S), O = P V. Counts the three-phase HBM traffic of a standard
/// implementation: S and P each written once and read back once.
NaiveForwardResult attention_forward_naive(const Matrix& q, const Matrix& k, const Matrix& v,
                                           const AttentionConfig& cfg, CostCounters& counters);

/// Max-shifted row softmax. A row that is entirely -inf is rejected with
/// MaskedRowError.
Matrix softmax_rows(ConstMatrixView s);

/// Row softmax evaluated in 32-bit arithmetic without subtracting the row
/// max; overflows once any logit exceeds ~88.7.
Matrix unshifted_softmax_rows_f32(ConstMatrixView s);

/// ds = (diag(p) - p p^T) dp, evaluated as ds[j] = p[j] * (dp[j] - <p, dp>).
RowVector softmax_backward_row(std::span<const double> p, std::span<const double> dp);

/// Chain rule through the materialized forward: dV = P^T dO, dP = dO V^T,
/// dS = dsoftmax(dP) row by row, dQ = scale * dS K, dK = scale * dS^T Q.
Gradients attention_backward_naive(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& p,
                                   const Matrix& d_o, const AttentionConfig& cfg, CostCounters& counters);

}  // namespace flashattn
