#include "flashattn/config.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flashattn/errors.hpp"

namespace flashattn {

BlockSpec BlockSpec::make(std::size_t seq_len, std::size_t block_rows, std::size_t block_cols) {
  if (seq_len == 0) throw ConfigError("block spec: sequence length must be >= 1");
  if (block_rows == 0 || block_cols == 0) throw ConfigError("block spec: Br and Bc must be >= 1");
  BlockSpec spec;
  spec.seq_len_ = seq_len;
  spec.block_rows_ = block_rows;
  spec.block_cols_ = block_cols;
  spec.row_blocks_ = (seq_len + block_rows - 1) / block_rows;
  spec.col_blocks_ = (seq_len + block_cols - 1) / block_cols;
  return spec;
}

std::size_t BlockSpec::row_end(std::size_t i) const noexcept {
  return std::min(seq_len_, (i + 1) * block_rows_);
}

std::size_t BlockSpec::col_end(std::size_t j) const noexcept {
  return std::min(seq_len_, (j + 1) * block_cols_);
}

AttentionConfig AttentionConfig::make(std::size_t seq_len, std::size_t head_dim, std::size_t block_rows,
                                      std::size_t block_cols, bool causal) {
  AttentionConfig cfg;
  cfg.seq_len = seq_len;
  cfg.head_dim = head_dim;
  cfg.causal = causal;
  cfg.block = BlockSpec::make(seq_len, block_rows, block_cols);
  cfg.validate();
  return cfg;
}

double AttentionConfig::scale() const {
  if (softmax_scale) return *softmax_scale;
  return 1.0 / std::sqrt(static_cast<double>(head_dim));
}

void AttentionConfig::validate() const {
  if (seq_len == 0) throw ConfigError("attention config: N must be >= 1");
  if (head_dim == 0) throw ConfigError("attention config: d must be >= 1");
  if (softmax_scale && !(*softmax_scale > 0.0 && std::isfinite(*softmax_scale)))
    throw ConfigError("attention config: softmax scale must be positive and finite");
  if (block.seq_len() != seq_len)
    throw ConfigError("attention config: block spec built for N=" + std::to_string(block.seq_len()) +
                      ", config has N=" + std::to_string(seq_len));
}

}  // namespace flashattn
