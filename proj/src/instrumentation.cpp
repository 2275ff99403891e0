#include "flashattn/instrumentation.hpp"

#include <algorithm>
#include <string>

#include "flashattn/errors.hpp"

namespace flashattn {

void CostModel::validate() const {
  if (!(matmul_tput > 0 && nonmatmul_tput > 0 && hbm_bw > 0 && sram_bw > 0 && element_size > 0))
    throw DomainError("cost model: every throughput, bandwidth and element size must be positive");
}

std::array<std::uint64_t, 8> CounterSnapshot::values() const noexcept {
  return {matmul_flops,    nonmatmul_flops,  hbm_read_bytes,  hbm_write_bytes,
          sram_read_bytes, sram_write_bytes, blocks_computed, blocks_skipped};
}

CounterSnapshot CounterSnapshot::from_values(const std::array<std::uint64_t, 8>& v) noexcept {
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
}

CounterSnapshot snapshot(const CostCounters& c, std::uint64_t element_size) noexcept {
  return {c.matmul_flops,
          c.nonmatmul_flops,
          c.hbm_reads * element_size,
          c.hbm_writes * element_size,
          c.sram_reads * element_size,
          c.sram_writes * element_size,
          c.blocks_computed,
          c.blocks_skipped};
}

std::uint64_t flops_forward_model(std::int64_t seq_len, std::int64_t head_dim, std::int64_t n_heads, bool causal) {
  if (seq_len <= 0 || head_dim <= 0 || n_heads <= 0)
    throw DomainError("flops_forward_model: N, d and heads must be positive (got " + std::to_string(seq_len) +
                      ", " + std::to_string(head_dim) + ", " + std::to_string(n_heads) + ")");
  const auto n = static_cast<std::uint64_t>(seq_len);
  const std::uint64_t flops =
      4 * n * n * static_cast<std::uint64_t>(head_dim) * static_cast<std::uint64_t>(n_heads);
  return causal ? flops / 2 : flops;
}

std::uint64_t flops_backward_model(std::uint64_t forward_flops) noexcept {
  return (5 * forward_flops + 1) / 2;
}

namespace {

RuntimePrediction roofline(double matmul, double nonmatmul, double hbm_bytes, const CostModel& model) {
  model.validate();
  RuntimePrediction p;
  p.compute_seconds = matmul / model.matmul_tput + nonmatmul / model.nonmatmul_tput;
  p.memory_seconds = hbm_bytes / model.hbm_bw;
  p.bound = p.memory_seconds > p.compute_seconds ? Bound::kMemory : Bound::kCompute;
  p.seconds = std::max(p.compute_seconds, p.memory_seconds);
  return p;
}

}  // namespace

RuntimePrediction predict_runtime(const CostCounters& c, const CostModel& model) {
  const double bytes = static_cast<double>(c.hbm_reads + c.hbm_writes) * static_cast<double>(model.element_size);
  return roofline(static_cast<double>(c.matmul_flops), static_cast<double>(c.nonmatmul_flops), bytes, model);
}

RuntimePrediction predict_runtime(const CounterSnapshot& s, const CostModel& model) {
  return roofline(static_cast<double>(s.matmul_flops), static_cast<double>(s.nonmatmul_flops),
                  static_cast<double>(s.hbm_read_bytes + s.hbm_write_bytes), model);
}

double effective_flops_ratio(const CostCounters& c) {
  if (c.matmul_flops == 0 && c.nonmatmul_flops == 0) throw DomainError("effective_flops_ratio: no FLOPs recorded");
  const double matmul = static_cast<double>(c.matmul_flops);
  return matmul / (matmul + kNonmatmulCostFactor * static_cast<double>(c.nonmatmul_flops));
}

std::string_view to_string(Bound bound) noexcept {
  return bound == Bound::kMemory ? "memory-bound" : "compute-bound";
}

}  // namespace flashattn
