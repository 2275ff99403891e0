#include "flashattn/flash.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "flashattn/errors.hpp"

namespace flashattn {
namespace {

using LenVector = std::vector<std::size_t, TrackingAllocator<std::size_t>>;

/// Fills row_len with the causal prefix of each row of block (i, j). Returns
/// the sum of the prefix lengths.
std::uint64_t causal_prefix(const BlockSpec& spec, std::size_t i, std::size_t j, LenVector& row_len) {
  const std::size_t r0 = spec.row_begin(i);
  const std::size_t rows = spec.row_end(i) - r0;
  const std::size_t c0 = spec.col_begin(j);
  const std::size_t cols = spec.col_end(j) - c0;
  row_len.resize(rows);
  std::uint64_t total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t global = r0 + r;
    row_len[r] = global >= c0 ? std::min(global - c0 + 1, cols) : 0;
    total += row_len[r];
  }
  return total;
}

std::size_t live_len(std::span<const std::size_t> row_len, std::size_t r, std::size_t cols) noexcept {
  return row_len.empty() ? cols : std::min(row_len[r], cols);
}

void check_square_inputs(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v, const AttentionConfig& cfg,
                         const char* who) {
  cfg.validate();
  for (ConstMatrixView m : {q, k, v}) {
    if (m.rows() != cfg.seq_len || m.cols() != cfg.head_dim)
      throw DimensionError(std::string(who) + ": expected " + std::to_string(cfg.seq_len) + "x" +
                           std::to_string(cfg.head_dim) + " input, got " + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()));
  }
}

/// Writes the normalized rows and logsumexp of one finished row block.
void finalize_rows(ConstMatrixView o_accum, const SoftmaxStats& stats, MatrixView o_out, std::span<double> lse_out,
                   MaskedRowPolicy policy, OutputScaling scaling, CostCounters& counters) {
  const std::size_t d = o_accum.cols();
  for (std::size_t r = 0; r < o_accum.rows(); ++r) {
    const double ell = stats.ell[r];
    const auto src = o_accum.row(r);
    const auto dst = o_out.row(r);
    if (!(ell > 0.0)) {
      if (policy == MaskedRowPolicy::kError)
        throw MaskedRowError("row " + std::to_string(r) + " of the block has no unmasked column");
      std::ranges::fill(dst, 0.0);
      lse_out[r] = kNegInf;
      continue;
    }
    if (scaling == OutputScaling::kDeferred) {
      for (std::size_t c = 0; c < d; ++c) dst[c] = src[c] / ell;
      counters.nonmatmul_flops += d;
    } else {
      std::ranges::copy(src, dst.begin());
    }
    lse_out[r] = stats.m[r] + std::log(ell);
    counters.nonmatmul_flops += 2;
  }
  counters.sram_reads += o_accum.rows() * d;
}

/// Per-row buffers shared by the tiles of one kernel call.
struct RowScratch {
  LenVector row_len;
};

}  // namespace

CausalBlockClass causal_block_classification(std::size_t i_blk, std::size_t j_blk, const BlockSpec& spec) {
  if (i_blk >= spec.row_blocks() || j_blk >= spec.col_blocks())
    throw IndexError("causal_block_classification: block (" + std::to_string(i_blk) + ", " + std::to_string(j_blk) +
                     ") outside " + std::to_string(spec.row_blocks()) + "x" + std::to_string(spec.col_blocks()));
  const std::size_t min_row = spec.row_begin(i_blk);
  const std::size_t max_row = spec.row_end(i_blk) - 1;
  const std::size_t min_col = spec.col_begin(j_blk);
  const std::size_t max_col = spec.col_end(j_blk) - 1;
  if (min_col > max_row) return CausalBlockClass::kSkip;
  if (max_col <= min_row) return CausalBlockClass::kFullCompute;
  return CausalBlockClass::kPartialMask;
}

CausalCensus causal_census(const BlockSpec& spec) {
  CausalCensus census;
  for (std::size_t i = 0; i < spec.row_blocks(); ++i)
    for (std::size_t j = 0; j < spec.col_blocks(); ++j) {
      switch (causal_block_classification(i, j, spec)) {
        case CausalBlockClass::kSkip: ++census.skipped; break;
        case CausalBlockClass::kPartialMask: ++census.partial; break;
        case CausalBlockClass::kFullCompute: ++census.full; break;
      }
    }
  return census;
}

SoftmaxStats SoftmaxStats::initial(std::size_t rows) {
  return SoftmaxStats{RowVector(rows, kNegInf), RowVector(rows, 0.0)};
}

void online_softmax_step(SoftmaxStats& stats, MatrixView o_accum, MatrixView scores, ConstMatrixView v_blk,
                         CostCounters& counters, const StepOptions& options) {
  const std::size_t rows = scores.rows();
  const std::size_t cols = scores.cols();
  const std::size_t d = o_accum.cols();
  if (stats.m.size() != rows || stats.ell.size() != rows || o_accum.rows() != rows)
    throw DimensionError("online_softmax_step: stats/accumulator rows do not match the score block");
  if (v_blk.rows() != cols || v_blk.cols() != d)
    throw DimensionError("online_softmax_step: value block must be " + std::to_string(cols) + "x" +
                         std::to_string(d));
  if (!options.row_len.empty() && options.row_len.size() != rows)
    throw DimensionError("online_softmax_step: row_len length does not match the score block");

  const bool reduced = options.precision == AccumPrecision::kReduced;
  const bool per_step = options.output_scaling == OutputScaling::kPerStep;
  std::uint64_t live_total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t len = live_len(options.row_len, r, cols);
    live_total += len;
    const auto s = scores.row(r);
    const auto o = o_accum.row(r);

    double block_max = kNegInf;
    for (std::size_t c = 0; c < len; ++c) block_max = std::max(block_max, s[c]);
    const double m_old = stats.m[r];
    const double m_new = std::max(m_old, block_max);
    counters.nonmatmul_flops += len + 1;

    if (m_new == kNegInf) {
      // Nothing unmasked seen yet in this row; keep the initial state.
      std::fill(s.begin(), s.end(), 0.0);
      continue;
    }

    const double alpha = std::exp(m_old - m_new);
    double block_sum = 0.0;
    for (std::size_t c = 0; c < len; ++c) {
      double p = std::exp(s[c] - m_new);
      if (reduced) p = to_reduced(p);
      s[c] = p;
      block_sum += p;
    }
    std::fill(s.begin() + static_cast<std::ptrdiff_t>(len), s.end(), 0.0);
    const double ell_old = stats.ell[r];
    double ell_new = alpha * ell_old + block_sum;
    if (reduced) ell_new = to_reduced(ell_new);
    counters.nonmatmul_flops += 2 + 3 * len + 2;  // alpha; sub, exp, sum per entry; ell update

    const double factor = per_step ? alpha * ell_old : alpha;
    for (double& x : o) x *= factor;
    counters.nonmatmul_flops += d + (per_step ? 1 : 0);

    stats.m[r] = m_new;
    stats.ell[r] = ell_new;
  }

  gemm::nn_acc(o_accum, scores, v_blk, options.row_len, counters);

  if (per_step) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double ell = stats.ell[r];
      if (!(ell > 0.0)) continue;
      for (double& x : o_accum.row(r)) x /= ell;
      counters.nonmatmul_flops += d;
    }
  }
  if (reduced) round_to_reduced(o_accum);

  counters.sram_reads += 2 * live_total + live_total + cols * d + 2 * rows * d;
  counters.sram_writes += live_total + 2 * rows * d;
}

FinalizedBlock finalize_output(ConstMatrixView o_accum, const SoftmaxStats& stats, CostCounters& counters,
                               MaskedRowPolicy policy) {
  if (stats.m.size() != o_accum.rows() || stats.ell.size() != o_accum.rows())
    throw DimensionError("finalize_output: stats rows do not match the accumulator");
  FinalizedBlock out{Matrix(o_accum.rows(), o_accum.cols()), RowVector(o_accum.rows())};
  finalize_rows(o_accum, stats, out.o.view(), out.lse.span(), policy, OutputScaling::kDeferred, counters);
  return out;
}

void flash_forward_row_block(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v, const AttentionConfig& cfg,
                             std::size_t i, MatrixView o, std::span<double> lse, CostCounters& counters,
                             const ForwardHooks& hooks) {
  const BlockSpec& spec = cfg.block;
  const std::size_t d = cfg.head_dim;
  const std::size_t r0 = spec.row_begin(i);
  const std::size_t rows = spec.row_end(i) - r0;
  const double scale = cfg.scale();
  const bool reduced = cfg.accum_precision == AccumPrecision::kReduced;

  const ConstMatrixView q_i = q.block(r0, 0, rows, d);
  counters.hbm_reads += rows * d;

  SoftmaxStats stats = SoftmaxStats::initial(rows);
  Matrix o_accum(rows, d);
  Matrix scores(rows, spec.block_cols());
  RowScratch scratch;
  const StepOptions base{{}, cfg.accum_precision, cfg.output_scaling};

  const std::size_t tc = spec.col_blocks();
  for (std::size_t step = 0; step < tc; ++step) {
    const std::size_t j = hooks.column_order.empty() ? step : hooks.column_order[step];
    const CausalBlockClass cls = cfg.causal ? causal_block_classification(i, j, spec) : CausalBlockClass::kFullCompute;
    if (cls == CausalBlockClass::kSkip) {
      ++counters.blocks_skipped;
      continue;
    }
    ++counters.blocks_computed;

    const std::size_t c0 = spec.col_begin(j);
    const std::size_t cols = spec.col_end(j) - c0;
    const ConstMatrixView k_j = k.block(c0, 0, cols, d);
    const ConstMatrixView v_j = v.block(c0, 0, cols, d);
    counters.hbm_reads += 2 * cols * d;

    StepOptions opts = base;
    std::uint64_t live = static_cast<std::uint64_t>(rows) * cols;
    if (cls == CausalBlockClass::kPartialMask) {
      live = causal_prefix(spec, i, j, scratch.row_len);
      opts.row_len = scratch.row_len;
    }

    const MatrixView s = scores.block(0, 0, rows, cols);
    gemm::nt(s, q_i, k_j, opts.row_len, counters);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = s.row(r);
      const std::size_t len = live_len(opts.row_len, r, cols);
      for (std::size_t c = 0; c < len; ++c) row[c] = reduced ? to_reduced(scale * row[c]) : scale * row[c];
      std::fill(row.begin() + static_cast<std::ptrdiff_t>(len), row.end(), kNegInf);
    }
    counters.nonmatmul_flops += live;
    counters.sram_reads += rows * d + cols * d + live;
    counters.sram_writes += 2 * live;

    online_softmax_step(stats, o_accum.view(), s, v_j, counters, opts);
  }

  const MatrixView o_i = o.block(r0, 0, rows, d);
  finalize_rows(o_accum, stats, o_i, lse.subspan(r0, rows), cfg.masked_rows, cfg.output_scaling, counters);
  if (reduced) {
    round_to_reduced(o_i);
    round_to_reduced(lse.subspan(r0, rows));
  }
  counters.hbm_writes += rows * d + rows;

  if (!hooks.row_max.empty()) std::ranges::copy(stats.m, hooks.row_max.begin() + static_cast<std::ptrdiff_t>(r0));
  if (!hooks.row_sum.empty()) std::ranges::copy(stats.ell, hooks.row_sum.begin() + static_cast<std::ptrdiff_t>(r0));
}

void flash_forward_into(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v, const AttentionConfig& cfg,
                        CostCounters& counters, MatrixView o, std::span<double> lse, const ForwardHooks& hooks) {
  check_square_inputs(q, k, v, cfg, "flash_forward");
  const std::size_t n = cfg.seq_len;
  if (o.rows() != n || o.cols() != cfg.head_dim || lse.size() != n)
    throw DimensionError("flash_forward: output buffers must be N x d and length N");
  if (!hooks.column_order.empty()) {
    const std::size_t tc = cfg.block.col_blocks();
    std::vector<bool> seen(tc, false);
    if (hooks.column_order.size() != tc) throw ConfigError("flash_forward: column order must list every block once");
    for (std::size_t j : hooks.column_order) {
      if (j >= tc || seen[j]) throw ConfigError("flash_forward: column order must be a permutation");
      seen[j] = true;
    }
  }
  if ((!hooks.row_max.empty() && hooks.row_max.size() != n) || (!hooks.row_sum.empty() && hooks.row_sum.size() != n))
    throw DimensionError("flash_forward: stats outputs must have length N");
  for (std::size_t i = 0; i < cfg.block.row_blocks(); ++i) flash_forward_row_block(q, k, v, cfg, i, o, lse, counters, hooks);
}

FlashForwardResult flash_forward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionConfig& cfg,
                                 CostCounters& counters, const ForwardHooks& hooks) {
  cfg.validate();
  FlashForwardResult out{Matrix(cfg.seq_len, cfg.head_dim), RowVector(cfg.seq_len)};
  flash_forward_into(q, k, v, cfg, counters, out.o.view(), out.lse.span(), hooks);
  return out;
}

RowVector compute_D(const Matrix& o, const Matrix& d_o, CostCounters& counters) {
  if (o.rows() != d_o.rows() || o.cols() != d_o.cols())
    throw DimensionError("compute_D: O is " + std::to_string(o.rows()) + "x" + std::to_string(o.cols()) + ", dO is " +
                         std::to_string(d_o.rows()) + "x" + std::to_string(d_o.cols()));
  RowVector delta(o.rows());
  for (std::size_t r = 0; r < o.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < o.cols(); ++c) acc += d_o(r, c) * o(r, c);
    delta[r] = acc;
  }
  counters.nonmatmul_flops += 2 * o.rows() * o.cols();
  counters.hbm_reads += 2 * o.rows() * o.cols();
  counters.hbm_writes += o.rows();
  return delta;
}

void flash_backward_col_block(const BackwardInputs& in, const AttentionConfig& cfg, std::size_t j, MatrixView dk_j,
                              MatrixView dv_j, DqSink& dq_sink, CostCounters& counters) {
  const BlockSpec& spec = cfg.block;
  const std::size_t d = cfg.head_dim;
  const std::size_t c0 = spec.col_begin(j);
  const std::size_t cols = spec.col_end(j) - c0;
  const double scale = cfg.scale();
  const bool reduced = cfg.accum_precision == AccumPrecision::kReduced;
  if (dk_j.rows() != cols || dk_j.cols() != d || dv_j.rows() != cols || dv_j.cols() != d)
    throw DimensionError("flash_backward_col_block: dK_j/dV_j must be Bc x d");

  const ConstMatrixView k_j = in.k.block(c0, 0, cols, d);
  const ConstMatrixView v_j = in.v.block(c0, 0, cols, d);
  counters.hbm_reads += 2 * cols * d;

  Matrix dk_local(cols, d);
  Matrix dv_local(cols, d);
  const std::size_t br = spec.block_rows();
  Matrix p_tile(br, cols);
  Matrix dp_tile(br, cols);
  Matrix dq_tile(br, d);
  RowScratch scratch;

  for (std::size_t i = 0; i < spec.row_blocks(); ++i) {
    const CausalBlockClass cls = cfg.causal ? causal_block_classification(i, j, spec) : CausalBlockClass::kFullCompute;
    if (cls == CausalBlockClass::kSkip) {
      ++counters.blocks_skipped;
      dq_sink.skip(i, j);
      continue;
    }
    ++counters.blocks_computed;

    const std::size_t r0 = spec.row_begin(i);
    const std::size_t rows = spec.row_end(i) - r0;
    const ConstMatrixView q_i = in.q.block(r0, 0, rows, d);
    const ConstMatrixView do_i = in.d_o.block(r0, 0, rows, d);
    const auto lse_i = in.lse.subspan(r0, rows);
    const auto delta_i = in.delta.subspan(r0, rows);
    // Q_i, O_i, dO_i, L_i, D_i; dQ_i is loaded at the update below.
    counters.hbm_reads += 3 * rows * d + 2 * rows;

    std::span<const std::size_t> row_len;
    std::uint64_t live = static_cast<std::uint64_t>(rows) * cols;
    if (cls == CausalBlockClass::kPartialMask) {
      live = causal_prefix(spec, i, j, scratch.row_len);
      row_len = scratch.row_len;
    }

    // Recompute P_ij = exp(scale * Q_i K_j^T - L_i).
    const MatrixView p = p_tile.block(0, 0, rows, cols);
    gemm::nt(p, q_i, k_j, row_len, counters);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = p.row(r);
      const std::size_t len = live_len(row_len, r, cols);
      const double l = lse_i[r];
      for (std::size_t c = 0; c < len; ++c) {
        const double logit = reduced ? to_reduced(scale * row[c]) : scale * row[c];
        const double v = l == kNegInf ? 0.0 : std::exp(logit - l);
        row[c] = reduced ? to_reduced(v) : v;
      }
      std::fill(row.begin() + static_cast<std::ptrdiff_t>(len), row.end(), 0.0);
    }
    counters.nonmatmul_flops += 3 * live;

    gemm::tn_acc(dv_local.view(), p, do_i, row_len, counters);

    const MatrixView dp = dp_tile.block(0, 0, rows, cols);
    gemm::nt(dp, do_i, v_j, row_len, counters);

    // dS = scale * P o (dP - D), stored over dP.
    for (std::size_t r = 0; r < rows; ++r) {
      const auto prow = p.row(r);
      const auto dsrow = dp.row(r);
      const std::size_t len = live_len(row_len, r, cols);
      for (std::size_t c = 0; c < len; ++c) dsrow[c] = scale * (prow[c] * (dsrow[c] - delta_i[r]));
      std::fill(dsrow.begin() + static_cast<std::ptrdiff_t>(len), dsrow.end(), 0.0);
    }
    counters.nonmatmul_flops += 3 * live;

    const MatrixView dq_contrib = dq_tile.block(0, 0, rows, d);
    dq_contrib.fill(0.0);
    gemm::nn_acc(dq_contrib, dp, k_j, row_len, counters);
    counters.hbm_reads += rows * d;
    counters.hbm_writes += rows * d;
    counters.nonmatmul_flops += rows * d;
    dq_sink.accumulate(i, j, dq_contrib);

    gemm::tn_acc(dk_local.view(), dp, q_i, row_len, counters);
    if (reduced) {
      round_to_reduced(dk_local.view());
      round_to_reduced(dv_local.view());
    }

    counters.sram_reads += 5 * rows * d + 2 * cols * d + 6 * live;
    counters.sram_writes += 3 * live + rows * d + 2 * cols * d;
  }

  for (std::size_t r = 0; r < cols; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double dk = dk_j(r, c) + dk_local(r, c);
      const double dv = dv_j(r, c) + dv_local(r, c);
      dk_j(r, c) = reduced ? to_reduced(dk) : dk;
      dv_j(r, c) = reduced ? to_reduced(dv) : dv;
    }
  counters.hbm_writes += 2 * cols * d;
}

namespace {

class SerialDqSink final : public DqSink {
 public:
  SerialDqSink(MatrixView dq, const BlockSpec& spec, bool reduced) : dq_(dq), spec_(spec), reduced_(reduced) {}

  void accumulate(std::size_t i, std::size_t, ConstMatrixView contribution) override {
    const std::size_t r0 = spec_.row_begin(i);
    for (std::size_t r = 0; r < contribution.rows(); ++r) {
      const auto src = contribution.row(r);
      const auto dst = dq_.row(r0 + r);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] = reduced_ ? to_reduced(dst[c] + src[c]) : dst[c] + src[c];
    }
  }

 private:
  MatrixView dq_;
  const BlockSpec& spec_;
  bool reduced_;
};

}  // namespace

Gradients flash_backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& o, const Matrix& d_o,
                         std::span<const double> lse, const AttentionConfig& cfg, CostCounters& counters) {
  check_square_inputs(q, k, v, cfg, "flash_backward");
  if (lse.empty()) throw ContractError("flash_backward: logsumexp from the forward pass is required");
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.head_dim;
  if (lse.size() != n) throw DimensionError("flash_backward: logsumexp must have length N");
  for (const Matrix* m : {&o, &d_o})
    if (m->rows() != n || m->cols() != d) throw DimensionError("flash_backward: O and dO must be N x d");

  const RowVector delta = compute_D(o, d_o, counters);
  Gradients g{Matrix(n, d), Matrix(n, d), Matrix(n, d)};
  SerialDqSink sink(g.dq.view(), cfg.block, cfg.accum_precision == AccumPrecision::kReduced);
  const BackwardInputs in{q, k, v, o, d_o, lse, delta};
  for (std::size_t j = 0; j < cfg.block.col_blocks(); ++j) {
    const std::size_t c0 = cfg.block.col_begin(j);
    const std::size_t cols = cfg.block.col_end(j) - c0;
    flash_backward_col_block(in, cfg, j, g.dk.block(c0, 0, cols, d), g.dv.block(c0, 0, cols, d), sink, counters);
  }
  return g;
}

Gradients flash_backward_from_stats(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& o,
                                    const Matrix& d_o, std::span<const double> row_max,
                                    std::span<const double> row_sum, const AttentionConfig& cfg,
                                    CostCounters& counters) {
  if (row_max.empty() || row_sum.empty())
    throw ContractError("flash_backward_from_stats: running max and sum are required");
  if (row_max.size() != row_sum.size()) throw DimensionError("flash_backward_from_stats: stats lengths differ");
  RowVector lse(row_max.size());
  for (std::size_t r = 0; r < lse.size(); ++r)
    lse[r] = row_sum[r] > 0.0 ? row_max[r] + std::log(row_sum[r]) : kNegInf;
  counters.nonmatmul_flops += 2 * lse.size();
  return flash_backward(q, k, v, o, d_o, lse, cfg, counters);
}

}  // namespace flashattn
