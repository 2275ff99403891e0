// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// non-zero if any gated criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "flashattn/bench.hpp"
#include "flashattn/errors.hpp"
#include "flashattn/flash.hpp"
#include "flashattn/heads.hpp"
#include "flashattn/instrumentation.hpp"
#include "flashattn/memory_tracker.hpp"
#include "flashattn/reference.hpp"
#include "flashattn/scheduler.hpp"
#include "../test_util.hpp"

namespace fa = flashattn;
using fa::Matrix;
using fa::RowVector;
using fa::testing::max_abs;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  bool gated;
  std::function<Outcome()> run;
};

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(3) << x;
  return os.str();
}

constexpr std::size_t kBlocks[] = {16, 32, 64};

Outcome forward_oracle() {
  Outcome out;
  double worst = 0.0;
  std::size_t cases = 0;
  const auto t0 = Clock::now();
  for (std::size_t n : {17u, 64u, 128u, 257u, 1024u})
    for (std::size_t d : {8u, 64u, 128u})
      for (bool causal : {false, true})
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
          const auto x = fa::testing::random_qkv(n, d, seed * 7919 + n * 31 + d);
          fa::CostCounters c;
          const Matrix ref = fa::attention_forward_naive(x.q, x.k, x.v, fa::AttentionConfig::make(n, d, n, n, causal), c).o;
          for (std::size_t br : kBlocks)
            for (std::size_t bc : kBlocks) {
              const auto cfg = fa::AttentionConfig::make(n, d, br, bc, causal);
              const double err = max_abs(fa::flash_forward(x.q, x.k, x.v, cfg, c).o, ref);
              worst = std::max(worst, err);
              ++cases;
              if (!(err <= 1e-5)) out.pass = false;
            }
        }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (secs >= 120.0) out.pass = false;
  out.detail = std::to_string(cases) + " cases, worst max-abs " + fmt(worst) + " (tol 1e-5), " + fmt(secs) +
               " s (limit 120 s)";
  return out;
}

Outcome backward_oracle() {
  Outcome out;
  double worst = 0.0, worst_fd = 0.0;
  std::size_t cases = 0, fd_cases = 0;
  const auto t0 = Clock::now();
  for (std::size_t n : {17u, 64u, 128u, 257u})
    for (std::size_t d : {8u, 64u, 128u})
      for (bool causal : {false, true})
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
          const auto x = fa::testing::random_qkv(n, d, seed * 104729 + n * 13 + d);
          const Matrix d_o = fa::random_normal(n, d, seed + 900000 + n);
          fa::CostCounters c;
          const auto ref_cfg = fa::AttentionConfig::make(n, d, n, n, causal);
          const auto f = fa::attention_forward_naive(x.q, x.k, x.v, ref_cfg, c);
          const auto ref = fa::attention_backward_naive(x.q, x.k, x.v, f.p, d_o, ref_cfg, c);
          for (std::size_t br : kBlocks)
            for (std::size_t bc : kBlocks) {
              const auto cfg = fa::AttentionConfig::make(n, d, br, bc, causal);
              const auto fwd = fa::flash_forward(x.q, x.k, x.v, cfg, c);
              const auto g = fa::flash_backward(x.q, x.k, x.v, fwd.o, d_o, fwd.lse, cfg, c);
              const double err = std::max({max_abs(g.dq, ref.dq), max_abs(g.dk, ref.dk), max_abs(g.dv, ref.dv)});
              worst = std::max(worst, err);
              ++cases;
              if (!(err <= 1e-5)) out.pass = false;
            }
        }
  for (std::size_t n : {17u, 32u})
    for (bool causal : {false, true})
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t d = 8;
        const auto x = fa::testing::random_qkv(n, d, seed * 15485863 + n);
        const Matrix g = fa::random_normal(n, d, seed + 5000 + n);
        const auto fd = fa::testing::finite_difference_grads(x.q, x.k, x.v, g,
                                                             fa::AttentionConfig::make(n, d, n, n, causal));
        for (std::size_t br : kBlocks)
          for (std::size_t bc : kBlocks) {
            const auto cfg = fa::AttentionConfig::make(n, d, br, bc, causal);
            fa::CostCounters c;
            const auto fwd = fa::flash_forward(x.q, x.k, x.v, cfg, c);
            const auto an = fa::flash_backward(x.q, x.k, x.v, fwd.o, g, fwd.lse, cfg, c);
            const double err = std::max({max_abs(an.dq, fd.dq), max_abs(an.dk, fd.dk), max_abs(an.dv, fd.dv)});
            worst_fd = std::max(worst_fd, err);
            ++fd_cases;
            if (!(err <= 1e-4)) out.pass = false;
          }
      }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (secs >= 300.0) out.pass = false;
  out.detail = std::to_string(cases) + " oracle cases, worst " + fmt(worst) + " (tol 1e-5); " +
               std::to_string(fd_cases) + " finite-difference cases, worst " + fmt(worst_fd) + " (tol 1e-4); " +
               fmt(secs) + " s (limit 300 s)";
  return out;
}

Outcome two_block_identities() {
  Outcome out;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t bc = kBlocks[seed % 3], n = 2 * bc, d = seed % 2 == 0 ? 8 : 64;
    const auto x = fa::testing::random_qkv(n, d, seed + 31337, 1.5);
    const auto cfg = fa::AttentionConfig::make(n, d, kBlocks[(seed / 3) % 3], bc);
    std::vector<double> m(n), ell(n);
    fa::ForwardHooks hooks;
    hooks.row_max = m;
    hooks.row_sum = ell;
    fa::CostCounters c;
    const auto r = fa::flash_forward(x.q, x.k, x.v, cfg, c, hooks);
    const Matrix s = fa::attention_forward_naive(x.q, x.k, x.v, cfg, c).s;
    const RowVector mx = fa::rowmax(s);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += std::exp(s(i, j) - mx[i]);
      const double lse = mx[i] + std::log(sum);
      worst = std::max({worst, std::abs(m[i] - mx[i]), std::abs(ell[i] - sum), std::abs(r.lse[i] - lse)});
    }
  }
  out.pass = worst <= 1e-6;
  out.detail = "100 seeds, worst |diff| over m, l, L = " + fmt(worst) + " (tol 1e-6)";
  return out;
}

Outcome lse_sufficiency() {
  Outcome out;
  std::size_t cases = 0;
  for (std::size_t n : {17u, 64u, 130u})
    for (bool causal : {false, true})
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const std::size_t d = 16;
        const auto x = fa::testing::random_qkv(n, d, seed + n);
        const Matrix d_o = fa::random_normal(n, d, seed + 77);
        const auto cfg = fa::AttentionConfig::make(n, d, 32, 16, causal);
        std::vector<double> m(n), ell(n);
        fa::ForwardHooks hooks;
        hooks.row_max = m;
        hooks.row_sum = ell;
        fa::CostCounters c;
        const auto fwd = fa::flash_forward(x.q, x.k, x.v, cfg, c, hooks);
        const auto a = fa::flash_backward(x.q, x.k, x.v, fwd.o, d_o, fwd.lse, cfg, c);
        const auto b = fa::flash_backward_from_stats(x.q, x.k, x.v, fwd.o, d_o, m, ell, cfg, c);
        ++cases;
        if (!(a.dq == b.dq && a.dk == b.dk && a.dv == b.dv)) out.pass = false;
      }
  out.detail = std::to_string(cases) + " configurations, gradients from L vs (m, l) " +
               (out.pass ? "bitwise identical" : "differ");
  return out;
}

Outcome flop_counters() {
  Outcome out;
  std::ostringstream detail;
  std::size_t checked = 0;
  for (std::size_t n : {64u, 256u})
    for (std::size_t d : {16u, 64u})
      for (std::size_t b : kBlocks) {
        const auto cfg = fa::AttentionConfig::make(n, d, b, b);
        auto t = fa::BatchedTensors::random(1, fa::HeadLayout::make(4, 4), n, d, n + d + b);
        fa::CostCounters fwd, bwd;
        fa::multihead_forward(t, cfg, fwd);
        fa::multihead_backward(t, cfg, bwd);
        const std::uint64_t model = fa::flops_forward_model(n, d, 4, false);
        if (fwd.matmul_flops != model || 2 * bwd.matmul_flops != 5 * fwd.matmul_flops ||
            bwd.matmul_flops != fa::flops_backward_model(model))
          out.pass = false;
        ++checked;
      }
  // Backward/forward also exact under the causal mask.
  {
    const auto cfg = fa::AttentionConfig::make(200, 16, 32, 64, true);
    auto t = fa::BatchedTensors::random(1, fa::HeadLayout::make(2, 2), 200, 16, 3);
    fa::CostCounters fwd, bwd;
    fa::multihead_forward(t, cfg, fwd);
    fa::multihead_backward(t, cfg, bwd);
    if (2 * bwd.matmul_flops != 5 * fwd.matmul_flops) out.pass = false;
  }
  detail << checked << " configs: forward == 4N^2 d h, backward == 2.5x forward; causal/non-causal:";
  for (std::size_t t : {4u, 16u}) {
    const std::size_t b = 64, n = b * t, d = 16;
    const auto x = fa::testing::random_qkv(n, d, t);
    fa::CostCounters full, causal;
    fa::flash_forward(x.q, x.k, x.v, fa::AttentionConfig::make(n, d, b, b, false), full);
    fa::flash_forward(x.q, x.k, x.v, fa::AttentionConfig::make(n, d, b, b, true), causal);
    const double ratio = static_cast<double>(causal.matmul_flops) / static_cast<double>(full.matmul_flops);
    const double limit = t == 4 ? 0.625 : 0.53;
    if (!(ratio <= limit)) out.pass = false;
    detail << " T=" << t << " " << std::setprecision(4) << ratio << " (<= " << limit << ")";
  }
  out.detail = detail.str();
  return out;
}

Outcome causal_census() {
  Outcome out;
  std::ostringstream detail;
  for (std::size_t t : {1u, 2u, 4u, 8u, 16u}) {
    const std::size_t b = 16, n = b * t;
    const auto cfg = fa::AttentionConfig::make(n, 8, b, b, true);
    const auto x = fa::testing::random_qkv(n, 8, t);
    fa::CostCounters c;
    fa::flash_forward(x.q, x.k, x.v, cfg, c);
    std::size_t partial = 0;
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j)
        partial += fa::causal_block_classification(i, j, cfg.block) == fa::CausalBlockClass::kPartialMask ? 1 : 0;
    const auto census = fa::causal_census(cfg.block);
    if (c.blocks_computed != t * (t + 1) / 2 || c.blocks_skipped != t * (t - 1) / 2 || partial != t ||
        census.partial != t)
      out.pass = false;
    detail << " T=" << t << ":" << c.blocks_computed << "/" << partial;
  }
  out.detail = "computed/partial" + detail.str();
  return out;
}

Outcome memory_behavior() {
  Outcome out;
  std::ostringstream detail;
  const std::size_t d = 64, b = 64;
  std::vector<std::int64_t> flash_peaks, naive_peaks;
  std::vector<double> ratios;
  for (std::size_t n : {512u, 1024u, 2048u, 4096u}) {
    const auto x = fa::testing::random_qkv(n, d, n);
    const auto cfg = fa::AttentionConfig::make(n, d, b, b);
    fa::CostCounters fc, nc;
    Matrix o(n, d);
    RowVector lse(n);
    {
      fa::PeakMemoryScope scope;
      fa::flash_forward_into(x.q, x.k, x.v, cfg, fc, o.view(), lse.span());
      if (n >= 1024) flash_peaks.push_back(scope.peak_above_baseline());
    }
    {
      fa::PeakMemoryScope scope;
      fa::attention_forward_naive(x.q, x.k, x.v, cfg, nc);
      const std::int64_t peak = scope.peak_above_baseline();
      if (n >= 1024) naive_peaks.push_back(peak);
      if (peak < static_cast<std::int64_t>(n * n * sizeof(double))) out.pass = false;
    }
    const auto fs = fa::snapshot(fc), ns = fa::snapshot(nc);
    ratios.push_back(static_cast<double>(fs.hbm_read_bytes + fs.hbm_write_bytes) /
                     static_cast<double>(ns.hbm_read_bytes + ns.hbm_write_bytes));
  }
  const std::int64_t bound = 8 * static_cast<std::int64_t>(b * b + b * d + b * d + 8 * b);
  for (std::int64_t p : flash_peaks)
    if (p != flash_peaks.front() || p > bound) out.pass = false;
  for (std::size_t i = 1; i < naive_peaks.size(); ++i)
    if (naive_peaks[i] < 4 * naive_peaks[i - 1] * 9 / 10) out.pass = false;
  for (std::size_t i = 1; i < ratios.size(); ++i)
    if (!(ratios[i] < ratios[i - 1])) out.pass = false;
  detail << "flash peak (N=1k,2k,4k) bytes:";
  for (auto p : flash_peaks) detail << ' ' << p;
  detail << " (bound " << bound << "); naive peak:";
  for (auto p : naive_peaks) detail << ' ' << p;
  detail << "; hbm flash/naive (N=512..4k):";
  for (double r : ratios) detail << ' ' << std::setprecision(4) << r;
  out.detail = detail.str();
  return out;
}

Outcome head_sharing() {
  Outcome out;
  double worst = 0.0;
  std::vector<std::size_t> kv_bytes;
  for (std::size_t nkv : {8u, 2u, 1u})
    for (bool causal : {false, true}) {
      const std::size_t n = 64, d = 16;
      const auto cfg = fa::AttentionConfig::make(n, d, 16, 32, causal);
      auto t = fa::BatchedTensors::random(2, fa::HeadLayout::make(8, nkv), n, d, nkv * 2 + causal);
      fa::CostCounters c;
      fa::multihead_forward(t, cfg, c);
      fa::multihead_backward(t, cfg, c);
      const auto dup = fa::testing::duplicate_then_sum(t, cfg);
      for (std::size_t s = 0; s < t.q.size(); ++s)
        worst = std::max({worst, max_abs(t.o[s], dup.o[s]), max_abs(t.dq[s], dup.dq[s])});
      for (std::size_t s = 0; s < t.k.size(); ++s)
        worst = std::max({worst, max_abs(t.dk[s], dup.dk[s]), max_abs(t.dv[s], dup.dv[s])});
      if (!causal) kv_bytes.push_back(t.kv_storage_bytes());
    }
  if (!(worst <= 1e-6)) out.pass = false;
  if (kv_bytes[0] != 4 * kv_bytes[1] || kv_bytes[1] != 2 * kv_bytes[2]) out.pass = false;
  out.detail = "layouts (8,8) (8,2) (8,1): worst " + fmt(worst) + " (tol 1e-6); K/V bytes " +
               std::to_string(kv_bytes[0]) + " / " + std::to_string(kv_bytes[1]) + " / " + std::to_string(kv_bytes[2]);
  return out;
}

Outcome parallel_determinism() {
  Outcome out;
  double atomic_worst = 0.0;
  for (bool causal : {false, true}) {
    const std::size_t n = 200, d = 16;
    const auto cfg = fa::AttentionConfig::make(n, d, 32, 32, causal);
    auto base = fa::BatchedTensors::random(2, fa::HeadLayout::make(4, 2), n, d, 99 + causal);
    fa::BatchedTensors serial = base;
    fa::CostCounters c;
    fa::multihead_forward(serial, cfg, c);
    fa::multihead_backward(serial, cfg, c);
    for (std::size_t w : {1u, 2u, 8u}) {
      fa::SchedulerConfig s;
      s.n_workers = w;
      fa::BatchedTensors t = base;
      fa::run_forward_parallel(t, cfg, s, c);
      for (std::size_t i = 0; i < t.o.size(); ++i)
        if (!(t.o[i] == serial.o[i] && t.lse[i] == serial.lse[i])) out.pass = false;
      fa::run_backward_parallel(t, cfg, s, c);
      for (std::size_t i = 0; i < t.dq.size(); ++i)
        if (!(t.dq[i] == serial.dq[i])) out.pass = false;
      for (std::size_t i = 0; i < t.dk.size(); ++i)
        if (!(t.dk[i] == serial.dk[i] && t.dv[i] == serial.dv[i])) out.pass = false;

      s.deterministic = false;
      s.dq_merge = fa::DqMerge::kAtomic;
      fa::run_backward_parallel(t, cfg, s, c);
      for (std::size_t i = 0; i < t.dq.size(); ++i) atomic_worst = std::max(atomic_worst, max_abs(t.dq[i], serial.dq[i]));
      for (std::size_t i = 0; i < t.dk.size(); ++i)
        atomic_worst = std::max({atomic_worst, max_abs(t.dk[i], serial.dk[i]), max_abs(t.dv[i], serial.dv[i])});
    }
  }
  if (!(atomic_worst <= 1e-5)) out.pass = false;
  out.detail = std::string("workers {1,2,8}: forward and buffered backward ") +
               (out.pass ? "bitwise equal to serial" : "mismatch") + "; atomic worst " + fmt(atomic_worst) +
               " (tol 1e-5)";
  return out;
}

Outcome overflow_robustness() {
  Outcome out;
  const std::size_t n = 128, d = 8;
  auto x = fa::testing::random_qkv(n, d, 300);
  auto cfg = fa::AttentionConfig::make(n, d, 32, 32);
  cfg.softmax_scale = 1.0;
  fa::CostCounters c;
  double top = 0.0;
  for (double e : fa::attention_forward_naive(x.q, x.k, x.v, cfg, c).s.data()) top = std::max(top, e);
  const double f = std::sqrt(300.0 / top);
  for (Matrix* m : {&x.q, &x.k})
    for (double& e : m->data()) e *= f;
  const auto ref = fa::attention_forward_naive(x.q, x.k, x.v, cfg, c);
  double top2 = 0.0;
  for (double e : ref.s.data()) top2 = std::max(top2, e);

  const auto r = fa::flash_forward(x.q, x.k, x.v, cfg, c);
  const bool finite = std::ranges::all_of(r.o.data(), [](double e) { return std::isfinite(e); }) &&
                      std::ranges::all_of(r.lse, [](double e) { return std::isfinite(e); });
  const Matrix unshifted = fa::unshifted_softmax_rows_f32(ref.s);
  const auto bad = std::ranges::count_if(unshifted.data(), [](double e) { return !std::isfinite(e); });
  const double err = max_abs(r.o, ref.o);
  out.pass = finite && bad > 0 && err <= 1e-5;
  out.detail = "max logit " + fmt(top2) + ": flash O/L " + (finite ? "finite" : "NOT finite") +
               ", max-abs vs shifted oracle " + fmt(err) + "; unshifted fp32 softmax has " + std::to_string(bad) +
               " non-finite entries";
  return out;
}

Outcome speedup_direction() {
  Outcome out;
  fa::BenchSpec s;
  s.seq_lens = {2048};
  s.token_budget = 2048;
  s.head_dim = 64;
  s.hidden_dim = 64;
  s.methods = {fa::BenchMethod::kNaive, fa::BenchMethod::kFlashSerial};
  s.repeats = 3;
  const auto result = fa::run_benchmark(s);
  double naive = 0.0, flash = 0.0;
  for (const auto& r : result.rows) (r.method == "naive" ? naive : flash) = r.wall_time_s;
  out.pass = flash > 0.0 && flash < naive;
  std::cout << fa::compare_report(result.rows);
  out.detail = "N=2048 d=64: naive " + fmt(naive) + " s, flash-serial " + fmt(flash) + " s, ratio " +
               fmt(naive / flash);
  return out;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "oracle equivalence (forward)", true, forward_oracle},
      {2, "oracle equivalence (backward) + finite differences", true, backward_oracle},
      {3, "two-block online-softmax identities", true, two_block_identities},
      {4, "logsumexp sufficiency", true, lse_sufficiency},
      {5, "FLOP counters", true, flop_counters},
      {6, "causal block census", true, causal_census},
      {7, "memory behavior", true, memory_behavior},
      {8, "MQA/GQA equivalence", true, head_sharing},
      {9, "parallel determinism", true, parallel_determinism},
      {10, "overflow robustness", true, overflow_robustness},
      {11, "desk-scale speedup direction (reported, not gated)", false, speedup_direction},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "AC" << c.id << " " << c.title << ": " << o.detail << std::endl;
    if (!o.pass && c.gated) ++failed;
  }
  std::cout << (failed == 0 ? "acceptance: all gated criteria passed" : "acceptance: gated failures present")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
