#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "flashattn/config.hpp"
#include "flashattn/heads.hpp"
#include "flashattn/instrumentation.hpp"
#include "flashattn/scheduler.hpp"

namespace flashattn {

enum class BenchMethod { kNaive, kFlashSerial, kFlashParallel };
enum class BenchPass { kForward, kBackward, kForwardBackward };

std::string_view to_string(BenchMethod method) noexcept;
std::string_view to_string(BenchPass pass) noexcept;
/// Accepts "naive", "flash-serial", "flash-parallel". Throws ConfigError.
BenchMethod parse_method(std::string_view name);
/// Accepts "fwd", "bwd", "fwd+bwd" and "fwd-bwd". Throws ConfigError.
BenchPass parse_pass(std::string_view name);

/// Constant-token sequence-length sweep: batch = token_budget / seq_len and
/// heads = hidden_dim / head_dim, so every configuration processes the same
/// number of tokens.
struct BenchSpec {
  std::vector<std::size_t> seq_lens{256, 512, 1024, 2048};
  std::size_t token_budget = 2048;
  std::size_t head_dim = 64;
  std::size_t hidden_dim = 512;
  bool causal = false;
  std::vector<BenchMethod> methods{BenchMethod::kNaive, BenchMethod::kFlashSerial, BenchMethod::kFlashParallel};
  BenchPass pass = BenchPass::kForward;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;

  std::size_t workers = 1;
  std::size_t block_rows = 64;
  std::size_t block_cols = 64;
  bool autotune = false;
  bool deterministic = true;
  DqMerge dq_merge = DqMerge::kBuffered;
  AccumPrecision precision = AccumPrecision::kFull;
  /// Naive runs whose N x N intermediates for one head would exceed this are
  /// skipped.
  std::uint64_t naive_memory_limit_bytes = std::uint64_t{1} << 30;
  /// Test seam: sees each flash method's gate-run outputs before they are
  /// compared with the oracle.
  std::function<void(BenchMethod, BatchedTensors&)> gate_probe;

  std::size_t n_heads() const noexcept { return head_dim == 0 ? 0 : hidden_dim / head_dim; }
  std::size_t batch_for(std::size_t seq_len) const noexcept { return token_budget / seq_len; }
  /// Max-abs tolerance of the correctness gate.
  double gate_tolerance() const noexcept { return precision == AccumPrecision::kFull ? 1e-5 : 1e-3; }
  /// Throws ConfigError when the sweep is infeasible.
  void validate() const;
};

struct BenchRow {
  std::string method;
  std::size_t seq_len = 0;
  std::size_t batch = 0;
  std::size_t head_dim = 0;
  std::size_t n_heads = 0;
  bool causal = false;
  std::string pass;
  double wall_time_s = 0.0;
  std::uint64_t model_flops = 0;
  double achieved_flops_per_s = 0.0;
  CounterSnapshot counters;

  friend bool operator==(const BenchRow&, const BenchRow&) = default;
};

struct SkippedRun {
  std::string method;
  std::size_t seq_len = 0;
  std::string reason;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<SkippedRun> skipped;
  /// Free-form log lines: gate deviations, autotune choices.
  std::vector<std::string> notes;
};

/// For each seq_len and method: one untimed run that doubles as warm-up and
/// correctness gate against the naive oracle (when the oracle fits in
/// memory), then `repeats` timed runs; the median is reported. Throws
/// ConfigError for an infeasible spec and ValidationError when a method
/// deviates from the oracle by more than gate_tolerance().
BenchResult run_benchmark(const BenchSpec& spec);

/// Header plus one line per row. Column order: method, seq_len, batch,
/// head_dim, n_heads, causal, pass, wall_time_s, model_flops,
/// achieved_flops_per_s, then CounterSnapshot::kKeys. Reals use the shortest
/// round-trip decimal form. Throws ContractError on empty input.
std::string format_csv(const std::vector<BenchRow>& rows);
/// Writes format_csv(rows) to `path`; IoError if the file cannot be written.
void emit_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path);
/// Inverse of format_csv. Throws ValidationError on malformed input.
std::vector<BenchRow> parse_csv(std::string_view text);

/// Absolute table with roofline predictions, pairwise method speedups on
/// matching configurations and causal/non-causal ratios.
std::string compare_report(const std::vector<BenchRow>& rows, const CostModel& model = {});

}  // namespace flashattn
