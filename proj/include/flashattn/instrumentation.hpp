#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "flashattn/counters.hpp"

namespace flashattn {

/// Throughput and bandwidth constants for the roofline estimate. Defaults
/// are A100-class: FP16 tensor-core matmul, FP32 non-matmul, HBM2e and
/// on-chip SRAM bandwidth.
struct CostModel {
  double matmul_tput = 312e12;    // FLOP/s
  double nonmatmul_tput = 19.5e12;
  double hbm_bw = 2.0e12;         // bytes/s
  double sram_bw = 19e12;
  std::uint64_t element_size = 2;  // bytes

  void validate() const;  // throws DomainError unless every field is positive
};

/// Flat key/value view of CostCounters in bytes. Key order is fixed and is
/// also the CSV column order.
struct CounterSnapshot {
  std::uint64_t matmul_flops = 0;
  std::uint64_t nonmatmul_flops = 0;
  std::uint64_t hbm_read_bytes = 0;
  std::uint64_t hbm_write_bytes = 0;
  std::uint64_t sram_read_bytes = 0;
  std::uint64_t sram_write_bytes = 0;
  std::uint64_t blocks_computed = 0;
  std::uint64_t blocks_skipped = 0;

  static constexpr std::array<std::string_view, 8> kKeys = {
      "matmul_flops",    "nonmatmul_flops",  "hbm_read_bytes",  "hbm_write_bytes",
      "sram_read_bytes", "sram_write_bytes", "blocks_computed", "blocks_skipped"};

  std::array<std::uint64_t, 8> values() const noexcept;
  static CounterSnapshot from_values(const std::array<std::uint64_t, 8>& values) noexcept;

  friend bool operator==(const CounterSnapshot&, const CounterSnapshot&) = default;
};

CounterSnapshot snapshot(const CostCounters& counters, std::uint64_t element_size = 2) noexcept;

/// 4 * N^2 * d * heads, halved when causal. Throws DomainError on any
/// non-positive argument.
std::uint64_t flops_forward_model(std::int64_t seq_len, std::int64_t head_dim, std::int64_t n_heads, bool causal);

/// 2.5x the forward count: 2 matmuls forward, 5 backward. Rounds half up.
std::uint64_t flops_backward_model(std::uint64_t forward_flops) noexcept;

enum class Bound { kCompute, kMemory };

struct RuntimePrediction {
  double seconds = 0.0;
  double compute_seconds = 0.0;
  double memory_seconds = 0.0;
  Bound bound = Bound::kCompute;
};

/// Max-roofline: max(matmul/matmul_tput + nonmatmul/nonmatmul_tput,
/// hbm_bytes/hbm_bw). Compute and memory are assumed to overlap fully; this
/// is not a simulator.
RuntimePrediction predict_runtime(const CostCounters& counters, const CostModel& model = {});
RuntimePrediction predict_runtime(const CounterSnapshot& snap, const CostModel& model = {});

/// Non-matmul work is charged at this multiple of matmul work.
inline constexpr double kNonmatmulCostFactor = 16.0;

/// matmul / (matmul + 16 * nonmatmul). Throws DomainError if both are zero.
double effective_flops_ratio(const CostCounters& counters);

std::string_view to_string(Bound bound) noexcept;

}  // namespace flashattn
