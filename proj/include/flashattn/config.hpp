#pragma once

#include <cstddef>
#include <optional>

#include "flashattn/matrix.hpp"

namespace flashattn {

/// Partition of a length-N sequence into Br-row and Bc-column blocks. The
/// last block in each direction may be ragged; nothing is padded.
class BlockSpec {
 public:
  /// Throws ConfigError unless seq_len, block_rows and block_cols are >= 1.
  static BlockSpec make(std::size_t seq_len, std::size_t block_rows, std::size_t block_cols);

  std::size_t seq_len() const noexcept { return seq_len_; }
  std::size_t block_rows() const noexcept { return block_rows_; }
  std::size_t block_cols() const noexcept { return block_cols_; }
  std::size_t row_blocks() const noexcept { return row_blocks_; }
  std::size_t col_blocks() const noexcept { return col_blocks_; }

  std::size_t row_begin(std::size_t i) const noexcept { return i * block_rows_; }
  std::size_t row_end(std::size_t i) const noexcept;
  std::size_t col_begin(std::size_t j) const noexcept { return j * block_cols_; }
  std::size_t col_end(std::size_t j) const noexcept;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;

 private:
  std::size_t seq_len_ = 1;
  std::size_t block_rows_ = 1;
  std::size_t block_cols_ = 1;
  std::size_t row_blocks_ = 1;
  std::size_t col_blocks_ = 1;
};

enum class AccumPrecision {
  kFull,     // 64-bit throughout
  kReduced,  // accumulators rounded to 32-bit after every block
};

/// What to do with a row whose every column is masked.
enum class MaskedRowPolicy {
  kError,
  kZeroOutput,  // O row = 0, L = -inf
};

/// kDeferred keeps the output accumulator un-normalized until the last
/// column block; kPerStep divides by the running sum after every block (the
/// older formulation, kept for non-matmul FLOP comparisons).
enum class OutputScaling { kDeferred, kPerStep };

struct AttentionConfig {
  std::size_t seq_len = 1;
  std::size_t head_dim = 1;
  bool causal = false;
  std::optional<double> softmax_scale;  // unset means 1/sqrt(head_dim)
  BlockSpec block;
  bool deterministic = true;
  AccumPrecision accum_precision = AccumPrecision::kFull;
  MaskedRowPolicy masked_rows = MaskedRowPolicy::kError;
  OutputScaling output_scaling = OutputScaling::kDeferred;

  static AttentionConfig make(std::size_t seq_len, std::size_t head_dim, std::size_t block_rows,
                              std::size_t block_cols, bool causal = false);

  double scale() const;
  /// Throws ConfigError on N = 0, d = 0, a non-positive scale or a block
  /// spec built for a different N.
  void validate() const;
};

struct Gradients {
  Matrix dq;
  Matrix dk;
  Matrix dv;
};

}  // namespace flashattn
