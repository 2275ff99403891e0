#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "flashattn/config.hpp"
#include "flashattn/counters.hpp"
#include "flashattn/heads.hpp"

// Worker-pool execution of the tiled kernels. A work unit plays the role of
// a GPU thread block and n_workers the role of the SM count: forward units
// own one row block of one (batch, query head); backward units own one
// column block of one (batch, kv head).

namespace flashattn {

enum class UnitKind { kForwardRowBlock, kBackwardColBlock };

struct WorkUnit {
  UnitKind kind = UnitKind::kForwardRowBlock;
  std::size_t batch_idx = 0;
  std::size_t head_idx = 0;  // query head (forward) or kv head (backward)
  std::size_t block_idx = 0;

  friend bool operator==(const WorkUnit&, const WorkUnit&) = default;
};

/// How column-block workers merge their dQ contributions.
enum class DqMerge {
  /// Concurrent additive read-modify-write. Correct up to floating-point
  /// reassociation.
  kAtomic,
  /// Each worker computes the contribution in a private tile; tiles are
  /// folded into dQ in ascending column-block order. Bitwise equal to the
  /// serial pass for any worker count.
  kBuffered,
};

struct SchedulerConfig {
  std::size_t n_workers = 1;
  bool deterministic = true;
  DqMerge dq_merge = DqMerge::kBuffered;
  /// Called at the start of every unit on the worker thread. Exceptions it
  /// throws fail the run like any other unit failure.
  std::function<void(const WorkUnit&)> on_unit;

  /// Throws ConfigError for zero workers or deterministic + kAtomic.
  void validate() const;
};

/// batch_size * q_heads * Tr independent units.
std::vector<WorkUnit> plan_forward(std::size_t batch_size, const HeadLayout& layout, const AttentionConfig& cfg);
/// batch_size * kv_heads * Tc units, column blocks fastest.
std::vector<WorkUnit> plan_backward(std::size_t batch_size, const HeadLayout& layout, const AttentionConfig& cfg);

/// Same results as multihead_forward, bitwise, for any worker count. On a
/// unit failure throws ExecutionError and leaves `batch` unchanged.
void run_forward_parallel(BatchedTensors& batch, const AttentionConfig& cfg, const SchedulerConfig& sched,
                          CostCounters& counters);

/// Same results as multihead_backward (bitwise with kBuffered). dK_j and
/// dV_j are written only by the unit that owns column block j.
void run_backward_parallel(BatchedTensors& batch, const AttentionConfig& cfg, const SchedulerConfig& sched,
                           CostCounters& counters);

struct AutotuneSpace {
  std::vector<std::size_t> block_rows{64, 128};
  std::vector<std::size_t> block_cols{64, 128};
  /// SRAM-analog capacity in scalars.
  std::uint64_t sram_capacity = std::numeric_limits<std::uint64_t>::max();
};

struct AutotuneBudget {
  std::size_t runs_per_candidate = 5;
};

struct AutotuneEntry {
  std::size_t block_rows = 0;
  std::size_t block_cols = 0;
  std::uint64_t footprint = 0;
  bool rejected = false;
  std::size_t runs = 0;
  double median_seconds = 0.0;
};

struct AutotuneResult {
  BlockSpec best;
  std::vector<AutotuneEntry> table;
};

/// Scalars resident on chip for one forward tile: S (Br x Bc), Q_i (Br x d),
/// K_j and V_j (Bc x d each) plus three length-Br row vectors.
std::uint64_t sram_footprint(std::size_t block_rows, std::size_t block_cols, std::size_t head_dim) noexcept;

/// Times flash_forward on the probe inputs for every candidate that fits the
/// capacity and returns the one with the lowest median. With a single
/// admissible candidate it is probed once and returned.
AutotuneResult autotune_block_sizes(const AutotuneSpace& space, const Matrix& q, const Matrix& k, const Matrix& v,
                                    const AttentionConfig& base, const AutotuneBudget& budget = {});

}  // namespace flashattn
