#pragma once

#include <cstdint>

namespace flashattn {

/// Work and traffic accumulated by a kernel run. Traffic fields count
/// elements moved; convert to bytes with CostModel::element_size.
///
/// HBM-analog traffic is anything crossing the kernel interface (the Q, K, V,
/// O, L, dO, dQ, dK, dV, D arrays). SRAM-analog traffic is block-local tiles.
struct CostCounters {
  std::uint64_t matmul_flops = 0;
  std::uint64_t nonmatmul_flops = 0;
  std::uint64_t hbm_reads = 0;
  std::uint64_t hbm_writes = 0;
  std::uint64_t sram_reads = 0;
  std::uint64_t sram_writes = 0;
  std::uint64_t blocks_computed = 0;
  std::uint64_t blocks_skipped = 0;

  CostCounters& operator+=(const CostCounters& other) noexcept {
    matmul_flops += other.matmul_flops;
    nonmatmul_flops += other.nonmatmul_flops;
    hbm_reads += other.hbm_reads;
    hbm_writes += other.hbm_writes;
    sram_reads += other.sram_reads;
    sram_writes += other.sram_writes;
    blocks_computed += other.blocks_computed;
    blocks_skipped += other.blocks_skipped;
    return *this;
  }

  friend CostCounters operator+(CostCounters a, const CostCounters& b) noexcept { return a += b; }
  friend bool operator==(const CostCounters&, const CostCounters&) = default;
};

}  // namespace flashattn
