#include "flashattn/scheduler.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "flashattn/errors.hpp"
#include "flashattn/flash.hpp"

namespace flashattn {
namespace {

/// Thrown inside a unit that was waiting on a merge ticket when another unit
/// failed.
struct RunAborted {};

/// Runs fn(unit, worker) for every unit on n_workers threads (the calling
/// thread is worker 0). Units are handed out in index order. The first
/// failure stops further dispatch, runs on_abort and is rethrown as
/// ExecutionError after every thread has joined.
template <class Fn>
void run_pool(std::size_t n_units, std::size_t n_workers, Fn&& fn, const std::function<void()>& on_abort) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&](std::size_t w) {
    while (!failed.load(std::memory_order_acquire)) {
      const std::size_t u = next.fetch_add(1, std::memory_order_relaxed);
      if (u >= n_units) return;
      try {
        fn(u, w);
      } catch (const RunAborted&) {
        return;
      } catch (...) {
        {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
        failed.store(true, std::memory_order_release);
        if (on_abort) on_abort();
        return;
      }
    }
  };

  {
    std::vector<std::jthread> threads;
    threads.reserve(n_workers - 1);
    for (std::size_t w = 1; w < n_workers; ++w) threads.emplace_back(worker, w);
    worker(0);
  }

  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const std::exception& e) {
      throw ExecutionError(std::string("work unit failed: ") + e.what());
    } catch (...) {
      throw ExecutionError("work unit failed with a non-standard exception");
    }
  }
}

CostCounters merge(const std::vector<CostCounters>& per_worker) {
  CostCounters total;
  for (const CostCounters& c : per_worker) total += c;
  return total;
}

inline constexpr std::uint32_t kAbortTicket = std::numeric_limits<std::uint32_t>::max();

/// Folds tiles into dQ in ascending column-block order. ticket[slot * Tr + i]
/// holds the next column block allowed to touch row block i.
class OrderedDqSink final : public DqSink {
 public:
  OrderedDqSink(MatrixView dq, std::atomic<std::uint32_t>* tickets, const BlockSpec& spec,
                const std::atomic<bool>& aborted, bool reduced)
      : dq_(dq), tickets_(tickets), spec_(spec), aborted_(aborted), reduced_(reduced) {}

  void accumulate(std::size_t i, std::size_t j, ConstMatrixView contribution) override {
    std::atomic<std::uint32_t>& ticket = wait_turn(i, j);
    const std::size_t r0 = spec_.row_begin(i);
    for (std::size_t r = 0; r < contribution.rows(); ++r) {
      const auto src = contribution.row(r);
      const auto dst = dq_.row(r0 + r);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] = reduced_ ? to_reduced(dst[c] + src[c]) : dst[c] + src[c];
    }
    pass(ticket, j);
  }

  void skip(std::size_t i, std::size_t j) override { pass(wait_turn(i, j), j); }

 private:
  std::atomic<std::uint32_t>& wait_turn(std::size_t i, std::size_t j) {
    std::atomic<std::uint32_t>& ticket = tickets_[i];
    for (;;) {
      const std::uint32_t seen = ticket.load(std::memory_order_acquire);
      if (seen == j) return ticket;
      if (seen == kAbortTicket || aborted_.load(std::memory_order_acquire)) throw RunAborted{};
      ticket.wait(seen, std::memory_order_acquire);
    }
  }

  static void pass(std::atomic<std::uint32_t>& ticket, std::size_t j) {
    ticket.store(static_cast<std::uint32_t>(j + 1), std::memory_order_release);
    ticket.notify_all();
  }

  MatrixView dq_;
  std::atomic<std::uint32_t>* tickets_;
  const BlockSpec& spec_;
  const std::atomic<bool>& aborted_;
  bool reduced_;
};

class AtomicDqSink final : public DqSink {
 public:
  AtomicDqSink(MatrixView dq, const BlockSpec& spec, bool reduced) : dq_(dq), spec_(spec), reduced_(reduced) {}

  void accumulate(std::size_t i, std::size_t, ConstMatrixView contribution) override {
    const std::size_t r0 = spec_.row_begin(i);
    for (std::size_t r = 0; r < contribution.rows(); ++r) {
      const auto src = contribution.row(r);
      const auto dst = dq_.row(r0 + r);
      for (std::size_t c = 0; c < src.size(); ++c) {
        std::atomic_ref<double> cell(dst[c]);
        double old = cell.load(std::memory_order_relaxed);
        double updated;
        do {
          updated = reduced_ ? to_reduced(old + src[c]) : old + src[c];
        } while (!cell.compare_exchange_weak(old, updated, std::memory_order_relaxed));
      }
    }
  }

 private:
  MatrixView dq_;
  const BlockSpec& spec_;
  bool reduced_;
};

}  // namespace

void SchedulerConfig::validate() const {
  if (n_workers == 0) throw ConfigError("scheduler: n_workers must be >= 1");
  if (deterministic && dq_merge == DqMerge::kAtomic)
    throw ConfigError("scheduler: atomic dQ merge is not deterministic; use buffered merge or clear deterministic");
}

std::vector<WorkUnit> plan_forward(std::size_t batch_size, const HeadLayout& layout, const AttentionConfig& cfg) {
  std::vector<WorkUnit> units;
  units.reserve(batch_size * layout.q_heads() * cfg.block.row_blocks());
  for (std::size_t b = 0; b < batch_size; ++b)
    for (std::size_t h = 0; h < layout.q_heads(); ++h)
      for (std::size_t i = 0; i < cfg.block.row_blocks(); ++i) units.push_back({UnitKind::kForwardRowBlock, b, h, i});
  return units;
}

std::vector<WorkUnit> plan_backward(std::size_t batch_size, const HeadLayout& layout, const AttentionConfig& cfg) {
  std::vector<WorkUnit> units;
  units.reserve(batch_size * layout.kv_heads() * cfg.block.col_blocks());
  for (std::size_t b = 0; b < batch_size; ++b)
    for (std::size_t h = 0; h < layout.kv_heads(); ++h)
      for (std::size_t j = 0; j < cfg.block.col_blocks(); ++j) units.push_back({UnitKind::kBackwardColBlock, b, h, j});
  return units;
}

void run_forward_parallel(BatchedTensors& batch, const AttentionConfig& cfg, const SchedulerConfig& sched,
                          CostCounters& counters) {
  sched.validate();
  batch.check_inputs(cfg);
  const std::size_t nq = batch.q.size();
  std::vector<Matrix> o(nq, Matrix(cfg.seq_len, cfg.head_dim));
  std::vector<RowVector> lse(nq, RowVector(cfg.seq_len));
  const std::vector<WorkUnit> units = plan_forward(batch.batch_size, batch.layout, cfg);
  std::vector<CostCounters> per_worker(sched.n_workers);

  run_pool(
      units.size(), sched.n_workers,
      [&](std::size_t u, std::size_t w) {
        const WorkUnit& unit = units[u];
        if (sched.on_unit) sched.on_unit(unit);
        const std::size_t qs = batch.q_slot(unit.batch_idx, unit.head_idx);
        const std::size_t kv = batch.kv_slot_for_q(unit.batch_idx, unit.head_idx);
        flash_forward_row_block(batch.q[qs], batch.k[kv], batch.v[kv], cfg, unit.block_idx, o[qs].view(),
                                lse[qs].span(), per_worker[w]);
      },
      {});

  batch.o = std::move(o);
  batch.lse = std::move(lse);
  counters += merge(per_worker);
}

void run_backward_parallel(BatchedTensors& batch, const AttentionConfig& cfg, const SchedulerConfig& sched,
                           CostCounters& counters) {
  sched.validate();
  batch.check_inputs(cfg);
  batch.check_forward_artifacts(cfg);
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.head_dim;
  const std::size_t nq = batch.q.size();
  const std::size_t tr = cfg.block.row_blocks();
  const bool reduced = cfg.accum_precision == AccumPrecision::kReduced;

  CostCounters setup;
  std::vector<RowVector> delta;
  delta.reserve(nq);
  for (std::size_t s = 0; s < nq; ++s) delta.push_back(compute_D(batch.o[s], batch.d_o[s], setup));

  std::vector<Matrix> dq(nq, Matrix(n, d));
  std::vector<Matrix> dk(batch.k.size(), Matrix(n, d));
  std::vector<Matrix> dv(batch.k.size(), Matrix(n, d));
  std::vector<std::atomic<std::uint32_t>> tickets(sched.dq_merge == DqMerge::kBuffered ? nq * tr : 0);
  std::atomic<bool> aborted{false};

  const std::vector<WorkUnit> units = plan_backward(batch.batch_size, batch.layout, cfg);
  std::vector<CostCounters> per_worker(sched.n_workers);
  const std::size_t group = batch.layout.group_size();

  auto abort_waiters = [&] {
    aborted.store(true, std::memory_order_release);
    for (auto& t : tickets) {
      t.store(kAbortTicket, std::memory_order_release);
      t.notify_all();
    }
  };

  run_pool(
      units.size(), sched.n_workers,
      [&](std::size_t u, std::size_t w) {
        const WorkUnit& unit = units[u];
        if (sched.on_unit) sched.on_unit(unit);
        const std::size_t b = unit.batch_idx;
        const std::size_t kv = batch.kv_slot(b, unit.head_idx);
        const std::size_t j = unit.block_idx;
        const std::size_t c0 = cfg.block.col_begin(j);
        const std::size_t cols = cfg.block.col_end(j) - c0;
        const MatrixView dk_j = dk[kv].block(c0, 0, cols, d);
        const MatrixView dv_j = dv[kv].block(c0, 0, cols, d);
        for (std::size_t g = 0; g < group; ++g) {
          const std::size_t qs = batch.q_slot(b, unit.head_idx * group + g);
          const BackwardInputs in{batch.q[qs], batch.k[kv], batch.v[kv], batch.o[qs], batch.d_o[qs], batch.lse[qs],
                                  delta[qs]};
          if (sched.dq_merge == DqMerge::kBuffered) {
            OrderedDqSink sink(dq[qs].view(), tickets.data() + qs * tr, cfg.block, aborted, reduced);
            flash_backward_col_block(in, cfg, j, dk_j, dv_j, sink, per_worker[w]);
          } else {
            AtomicDqSink sink(dq[qs].view(), cfg.block, reduced);
            flash_backward_col_block(in, cfg, j, dk_j, dv_j, sink, per_worker[w]);
          }
          per_worker[w].nonmatmul_flops += 2 * cols * d;  // group reduction of dK_j, dV_j
        }
      },
      abort_waiters);

  batch.dq = std::move(dq);
  batch.dk = std::move(dk);
  batch.dv = std::move(dv);
  counters += setup;
  counters += merge(per_worker);
}

std::uint64_t sram_footprint(std::size_t block_rows, std::size_t block_cols, std::size_t head_dim) noexcept {
  const std::uint64_t br = block_rows;
  const std::uint64_t bc = block_cols;
  const std::uint64_t d = head_dim;
  return br * bc + br * d + 2 * bc * d + 3 * br;
}

AutotuneResult autotune_block_sizes(const AutotuneSpace& space, const Matrix& q, const Matrix& k, const Matrix& v,
                                    const AttentionConfig& base, const AutotuneBudget& budget) {
  if (space.block_rows.empty() || space.block_cols.empty()) throw ConfigError("autotune: empty candidate grid");
  if (budget.runs_per_candidate == 0) throw ConfigError("autotune: runs_per_candidate must be >= 1");
  base.validate();

  AutotuneResult result;
  std::size_t admissible = 0;
  for (std::size_t br : space.block_rows)
    for (std::size_t bc : space.block_cols) {
      if (br == 0 || bc == 0) throw ConfigError("autotune: block sizes must be >= 1");
      AutotuneEntry e;
      e.block_rows = br;
      e.block_cols = bc;
      e.footprint = sram_footprint(br, bc, base.head_dim);
      e.rejected = e.footprint > space.sram_capacity;
      if (!e.rejected) ++admissible;
      result.table.push_back(e);
    }
  if (admissible == 0)
    throw CapacityError("autotune: every candidate needs more than " + std::to_string(space.sram_capacity) +
                        " SRAM scalars");

  const std::size_t runs = admissible == 1 ? 1 : budget.runs_per_candidate;
  const AutotuneEntry* best = nullptr;
  for (AutotuneEntry& e : result.table) {
    if (e.rejected) continue;
    AttentionConfig cfg = base;
    cfg.block = BlockSpec::make(base.seq_len, e.block_rows, e.block_cols);
    std::vector<double> times;
    for (std::size_t r = 0; r < runs; ++r) {
      CostCounters scratch;
      const auto t0 = std::chrono::steady_clock::now();
      const FlashForwardResult out = flash_forward(q, k, v, cfg, scratch);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::ranges::sort(times);
    e.runs = runs;
    e.median_seconds = times[times.size() / 2];
    if (best == nullptr || e.median_seconds < best->median_seconds) best = &e;
  }
  result.best = BlockSpec::make(base.seq_len, best->block_rows, best->block_cols);
  return result;
}

}  // namespace flashattn
