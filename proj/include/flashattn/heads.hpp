#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flashattn/config.hpp"
#include "flashattn/counters.hpp"
#include "flashattn/matrix.hpp"

namespace flashattn {

enum class HeadSharing { kMha, kGqa, kMqa };

/// Mapping of query heads onto key/value heads. Query heads
/// [h*g, (h+1)*g) share kv head h, where g is the group size.
class HeadLayout {
 public:
  /// Throws ConfigError unless both counts are >= 1 and n_kv divides n_q.
  static HeadLayout make(std::size_t n_q_heads, std::size_t n_kv_heads);

  std::size_t q_heads() const noexcept { return n_q_; }
  std::size_t kv_heads() const noexcept { return n_kv_; }
  std::size_t group_size() const noexcept { return n_q_ / n_kv_; }
  HeadSharing sharing() const noexcept;

  /// q_head / group_size. Throws IndexError when q_head >= q_heads().
  std::size_t kv_head_index(std::size_t q_head) const;

  friend bool operator==(const HeadLayout&, const HeadLayout&) = default;

 private:
  std::size_t n_q_ = 1;
  std::size_t n_kv_ = 1;
};

/// Per-(batch, head) matrices. Query-side roles (q, o, lse, d_o, dq) are
/// indexed by batch * q_heads + h; key/value roles (k, v, dk, dv) by
/// batch * kv_heads + h. K and V are stored once per kv head.
struct BatchedTensors {
  std::size_t batch_size = 0;
  HeadLayout layout;
  std::size_t seq_len = 0;
  std::size_t head_dim = 0;

  std::vector<Matrix> q, k, v;
  std::vector<Matrix> o;
  std::vector<RowVector> lse;
  std::vector<Matrix> d_o;
  std::vector<Matrix> dq, dk, dv;

  /// Q, K, V and dO drawn from N(0, 1) * scale, in that order, from one
  /// seeded stream.
  static BatchedTensors random(std::size_t batch_size, const HeadLayout& layout, std::size_t seq_len,
                               std::size_t head_dim, std::uint64_t seed, double scale = 1.0);

  std::size_t q_slot(std::size_t b, std::size_t h) const noexcept { return b * layout.q_heads() + h; }
  std::size_t kv_slot(std::size_t b, std::size_t kv) const noexcept { return b * layout.kv_heads() + kv; }
  /// kv slot read by query head h of sequence b.
  std::size_t kv_slot_for_q(std::size_t b, std::size_t h) const { return kv_slot(b, layout.kv_head_index(h)); }

  /// Bytes held by K and V.
  std::size_t kv_storage_bytes() const noexcept;

  /// Throws DimensionError if q/k/v counts or shapes disagree with the layout.
  void check_inputs(const AttentionConfig& cfg) const;
  /// Throws ContractError if o, lse or d_o are missing or mis-sized.
  void check_forward_artifacts(const AttentionConfig& cfg) const;
};

/// flash_forward for every (batch, query head) against its shared kv head.
/// Fills o and lse.
void multihead_forward(BatchedTensors& batch, const AttentionConfig& cfg, CostCounters& counters);

/// flash_backward for every (batch, query head). dq is per query head; dk and
/// dv are per kv head, summed over the query heads of the group in ascending
/// head order.
void multihead_backward(BatchedTensors& batch, const AttentionConfig& cfg, CostCounters& counters);

}  // namespace flashattn
