#pragma once

#include <cstddef>
#include <span>

#include "flashattn/config.hpp"
#include "flashattn/counters.hpp"
#include "flashattn/matrix.hpp"

// Tiled exact attention. The forward pass walks row blocks of Q and streams
// column blocks of K/V through an online softmax; the backward pass walks
// column blocks of K/V and recomputes each probability tile from the stored
// logsumexp. Neither pass allocates anything of size N x N.

namespace flashattn {

enum class CausalBlockClass { kSkip, kPartialMask, kFullCompute };

/// Classifies block (i_blk, j_blk) under the j > i mask using the actual
/// (possibly ragged) row and column extents. Throws IndexError when a block
/// index is out of range.
CausalBlockClass causal_block_classification(std::size_t i_blk, std::size_t j_blk, const BlockSpec& spec);

struct CausalCensus {
  std::size_t full = 0;
  std::size_t partial = 0;
  std::size_t skipped = 0;
};
CausalCensus causal_census(const BlockSpec& spec);

/// Running row statistics of the online softmax for one row block.
struct SoftmaxStats {
  RowVector m;    // running max of the scaled logits
  RowVector ell;  // running sum of exp(logit - m)

  /// m = -inf, ell = 0.
  static SoftmaxStats initial(std::size_t rows);
};

struct StepOptions {
  /// Unmasked prefix length of each row; empty means every column is live.
  std::span<const std::size_t> row_len;
  AccumPrecision precision = AccumPrecision::kFull;
  OutputScaling output_scaling = OutputScaling::kDeferred;
};

/// One column block of the online softmax, in place:
///   m'   = max(m, rowmax(S))
///   P~   = exp(S - m')            (written back into `scores`)
///   ell' = exp(m - m') * ell + rowsum(P~)
///   O'   = diag(exp(m - m')) * O + P~ V
/// With OutputScaling::kPerStep, O is instead kept normalized by ell' after
/// every step.
void online_softmax_step(SoftmaxStats& stats, MatrixView o_accum, MatrixView scores, ConstMatrixView v_blk,
                         CostCounters& counters, const StepOptions& options = {});

struct FinalizedBlock {
  Matrix o;
  RowVector lse;
};

/// O = diag(ell)^-1 O_accum, L = m + log(ell). A row with ell == 0 is
/// handled by `policy`.
FinalizedBlock finalize_output(ConstMatrixView o_accum, const SoftmaxStats& stats, CostCounters& counters,
                               MaskedRowPolicy policy = MaskedRowPolicy::kError);

struct FlashForwardResult {
  Matrix o;        // N x d
  RowVector lse;   // length N
};

/// Optional side channels of a forward run, used by tests.
struct ForwardHooks {
  /// Order in which column blocks are visited; empty means ascending.
  std::span<const std::size_t> column_order;
  /// When non-empty (length N), receive the final running max and sum.
  std::span<double> row_max;
  std::span<double> row_sum;
};

FlashForwardResult flash_forward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionConfig& cfg,
                                 CostCounters& counters, const ForwardHooks& hooks = {});

/// Same as flash_forward but writes into caller-owned outputs.
void flash_forward_into(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v, const AttentionConfig& cfg,
                        CostCounters& counters, MatrixView o, std::span<double> lse,
                        const ForwardHooks& hooks = {});

/// Computes output rows of row block `i` only. `o` and `lse` are the full
/// N x d and length-N outputs; other rows are not touched. Inputs are not
/// validated here.
void flash_forward_row_block(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v, const AttentionConfig& cfg,
                             std::size_t i, MatrixView o, std::span<double> lse, CostCounters& counters,
                             const ForwardHooks& hooks = {});

/// D[i] = sum_k dO[i][k] * O[i][k].
RowVector compute_D(const Matrix& o, const Matrix& d_o, CostCounters& counters);

/// Receives each row block's dQ contribution from a column-block worker.
class DqSink {
 public:
  virtual ~DqSink() = default;
  /// `contribution` is the (rows of block i) x d tile dS_ij K_j.
  virtual void accumulate(std::size_t i, std::size_t j, ConstMatrixView contribution) = 0;
  /// Block (i, j) was causally skipped and contributes nothing.
  virtual void skip(std::size_t /*i*/, std::size_t /*j*/) {}
};

struct BackwardInputs {
  ConstMatrixView q, k, v, o, d_o;
  std::span<const double> lse;
  std::span<const double> delta;  // D
};

/// Column block `j` of the backward pass. Adds this block's dK_j and dV_j
/// into `dk_j` / `dv_j` (each Bc x d) and hands every dQ contribution to
/// `dq_sink` in ascending row-block order.
void flash_backward_col_block(const BackwardInputs& in, const AttentionConfig& cfg, std::size_t j,
                              MatrixView dk_j, MatrixView dv_j, DqSink& dq_sink, CostCounters& counters);

/// Serial backward from the logsumexp alone.
Gradients flash_backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& o, const Matrix& d_o,
                         std::span<const double> lse, const AttentionConfig& cfg, CostCounters& counters);

/// Backward from per-row (m, ell); folds them into L = m + log(ell) before
/// running the logsumexp path.
Gradients flash_backward_from_stats(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& o,
                                    const Matrix& d_o, std::span<const double> row_max,
                                    std::span<const double> row_sum, const AttentionConfig& cfg,
                                    CostCounters& counters);

}  // namespace flashattn
