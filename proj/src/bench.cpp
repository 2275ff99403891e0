#include "flashattn/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "flashattn/errors.hpp"
#include "flashattn/flash.hpp"
#include "flashattn/heads.hpp"
#include "flashattn/reference.hpp"

namespace flashattn {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct RunOutput {
  double seconds = 0.0;
  CostCounters counters;
};

/// Naive attention over every (batch, head); K/V are read through the head
/// layout like the tiled path.
RunOutput run_naive(BatchedTensors& t, const AttentionConfig& cfg, BenchPass pass) {
  RunOutput out;
  const std::size_t nq = t.q.size();
  t.o.assign(nq, Matrix());
  if (pass != BenchPass::kForward) {
    t.dq.assign(nq, Matrix());
    t.dk.assign(t.k.size(), Matrix(cfg.seq_len, cfg.head_dim));
    t.dv.assign(t.k.size(), Matrix(cfg.seq_len, cfg.head_dim));
  }
  for (std::size_t b = 0; b < t.batch_size; ++b)
    for (std::size_t h = 0; h < t.layout.q_heads(); ++h) {
      const std::size_t qs = t.q_slot(b, h);
      const std::size_t kv = t.kv_slot_for_q(b, h);
      CostCounters untimed;
      auto t0 = Clock::now();
      NaiveForwardResult fwd =
          attention_forward_naive(t.q[qs], t.k[kv], t.v[kv], cfg, pass == BenchPass::kBackward ? untimed : out.counters);
      if (pass != BenchPass::kBackward) out.seconds += seconds_since(t0);
      t.o[qs] = std::move(fwd.o);
      if (pass == BenchPass::kForward) continue;
      t0 = Clock::now();
      Gradients g = attention_backward_naive(t.q[qs], t.k[kv], t.v[kv], fwd.p, t.d_o[qs], cfg, out.counters);
      out.seconds += seconds_since(t0);
      t.dq[qs] = std::move(g.dq);
      for (std::size_t e = 0; e < g.dk.size(); ++e) {
        t.dk[kv].data()[e] += g.dk.data()[e];
        t.dv[kv].data()[e] += g.dv.data()[e];
      }
    }
  return out;
}

RunOutput run_flash(BatchedTensors& t, const AttentionConfig& cfg, BenchPass pass, bool parallel,
                    const SchedulerConfig& sched) {
  RunOutput out;
  auto forward = [&](CostCounters& c) {
    if (parallel) {
      run_forward_parallel(t, cfg, sched, c);
    } else {
      multihead_forward(t, cfg, c);
    }
  };
  auto backward = [&](CostCounters& c) {
    if (parallel) {
      run_backward_parallel(t, cfg, sched, c);
    } else {
      multihead_backward(t, cfg, c);
    }
  };
  if (pass == BenchPass::kBackward) {
    CostCounters untimed;
    forward(untimed);
    const auto t0 = Clock::now();
    backward(out.counters);
    out.seconds = seconds_since(t0);
    return out;
  }
  const auto t0 = Clock::now();
  forward(out.counters);
  if (pass == BenchPass::kForwardBackward) backward(out.counters);
  out.seconds = seconds_since(t0);
  return out;
}

double max_deviation(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double worst = 0.0;
  for (std::size_t s = 0; s < a.size(); ++s) worst = std::max(worst, max_abs_diff(a[s], b[s]));
  return worst;
}

std::string format_real(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string format_gflops(double flops_per_s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << flops_per_s / 1e9;
  return os.str();
}

template <class T>
T parse_number(std::string_view field, std::string_view column) {
  T value{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw ValidationError("csv: bad value '" + std::string(field) + "' in column " + std::string(column));
  return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

constexpr std::array<std::string_view, 10> kLeadingColumns = {
    "method", "seq_len", "batch", "head_dim", "n_heads", "causal", "pass", "wall_time_s", "model_flops",
    "achieved_flops_per_s"};

std::string csv_header() {
  std::string header;
  for (std::string_view c : kLeadingColumns) {
    header += c;
    header += ',';
  }
  for (std::size_t k = 0; k < CounterSnapshot::kKeys.size(); ++k) {
    header += CounterSnapshot::kKeys[k];
    header += k + 1 < CounterSnapshot::kKeys.size() ? ',' : '\n';
  }
  return header;
}

}  // namespace

std::string_view to_string(BenchMethod method) noexcept {
  switch (method) {
    case BenchMethod::kNaive: return "naive";
    case BenchMethod::kFlashSerial: return "flash-serial";
    case BenchMethod::kFlashParallel: return "flash-parallel";
  }
  return "unknown";
}

std::string_view to_string(BenchPass pass) noexcept {
  switch (pass) {
    case BenchPass::kForward: return "fwd";
    case BenchPass::kBackward: return "bwd";
    case BenchPass::kForwardBackward: return "fwd+bwd";
  }
  return "unknown";
}

BenchMethod parse_method(std::string_view name) {
  if (name == "naive") return BenchMethod::kNaive;
  if (name == "flash-serial") return BenchMethod::kFlashSerial;
  if (name == "flash-parallel") return BenchMethod::kFlashParallel;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected naive, flash-serial or flash-parallel)");
}

BenchPass parse_pass(std::string_view name) {
  if (name == "fwd") return BenchPass::kForward;
  if (name == "bwd") return BenchPass::kBackward;
  if (name == "fwd+bwd" || name == "fwd-bwd") return BenchPass::kForwardBackward;
  throw ConfigError("unknown pass '" + std::string(name) + "' (expected fwd, bwd or fwd-bwd)");
}

void BenchSpec::validate() const {
  if (seq_lens.empty()) throw ConfigError("bench: no sequence lengths");
  if (methods.empty()) throw ConfigError("bench: no methods");
  if (repeats == 0) throw ConfigError("bench: repeats must be >= 1");
  if (workers == 0) throw ConfigError("bench: workers must be >= 1");
  if (head_dim == 0 || hidden_dim % head_dim != 0)
    throw ConfigError("bench: head_dim " + std::to_string(head_dim) + " must divide hidden_dim " +
                      std::to_string(hidden_dim));
  if (block_rows == 0 || block_cols == 0) throw ConfigError("bench: block sizes must be >= 1");
  if (deterministic && dq_merge == DqMerge::kAtomic)
    throw ConfigError("bench: atomic dQ merge cannot be deterministic");
  for (std::size_t n : seq_lens)
    if (n == 0 || token_budget % n != 0)
      throw ConfigError("bench: seq_len " + std::to_string(n) + " does not divide token budget " +
                        std::to_string(token_budget));
}

BenchResult run_benchmark(const BenchSpec& spec) {
  spec.validate();
  BenchResult result;
  const std::size_t d = spec.head_dim;
  const HeadLayout layout = HeadLayout::make(spec.n_heads(), spec.n_heads());
  const double input_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const bool needs_backward = spec.pass != BenchPass::kForward;
  SchedulerConfig sched;
  sched.n_workers = spec.workers;
  sched.deterministic = spec.deterministic;
  sched.dq_merge = spec.dq_merge;

  for (std::size_t n : spec.seq_lens) {
    const std::size_t batch = spec.batch_for(n);
    AttentionConfig cfg = AttentionConfig::make(n, d, spec.block_rows, spec.block_cols, spec.causal);
    cfg.accum_precision = spec.precision;
    cfg.deterministic = spec.deterministic;

    const std::uint64_t stream = spec.seed * 0x9E3779B97F4A7C15ULL + n;
    BatchedTensors inputs = BatchedTensors::random(batch, layout, n, d, stream, input_scale);

    if (spec.autotune) {
      const AutotuneResult tuned = autotune_block_sizes({}, inputs.q[0], inputs.k[0], inputs.v[0], cfg);
      cfg.block = tuned.best;
      result.notes.push_back("autotune N=" + std::to_string(n) + ": Br=" + std::to_string(tuned.best.block_rows()) +
                             " Bc=" + std::to_string(tuned.best.block_cols()));
    }

    const std::uint64_t per_head_bytes =
        static_cast<std::uint64_t>(n) * n * sizeof(double) * (needs_backward ? 4 : 2);
    const bool oracle_feasible = per_head_bytes <= spec.naive_memory_limit_bytes;

    // Oracle run; also the naive method's warm-up.
    BatchedTensors oracle = inputs;
    if (oracle_feasible) {
      AttentionConfig oracle_cfg = cfg;
      oracle_cfg.accum_precision = AccumPrecision::kFull;
      run_naive(oracle, oracle_cfg, spec.pass == BenchPass::kForward ? BenchPass::kForward : BenchPass::kForwardBackward);
    } else {
      result.notes.push_back("N=" + std::to_string(n) + ": naive oracle needs " + std::to_string(per_head_bytes) +
                             " bytes per head; correctness gate skipped");
    }

    for (BenchMethod method : spec.methods) {
      if (method == BenchMethod::kNaive && !oracle_feasible) {
        result.skipped.push_back({std::string(to_string(method)), n,
                                  "N x N intermediates exceed the naive memory limit of " +
                                      std::to_string(spec.naive_memory_limit_bytes) + " bytes"});
        continue;
      }
      auto run_once = [&](BatchedTensors& t) {
        if (method == BenchMethod::kNaive) return run_naive(t, cfg, spec.pass);
        return run_flash(t, cfg, spec.pass, method == BenchMethod::kFlashParallel, sched);
      };

      BatchedTensors work = inputs;
      if (method != BenchMethod::kNaive) {
        run_once(work);
        if (spec.gate_probe) spec.gate_probe(method, work);
        if (oracle_feasible) {
          double dev = 0.0;
          if (spec.pass != BenchPass::kBackward) dev = std::max(dev, max_deviation(work.o, oracle.o));
          if (needs_backward) {
            dev = std::max(dev, max_deviation(work.dq, oracle.dq));
            dev = std::max(dev, max_deviation(work.dk, oracle.dk));
            dev = std::max(dev, max_deviation(work.dv, oracle.dv));
          }
          if (!(dev <= spec.gate_tolerance())) {
            std::ostringstream os;
            os << "correctness gate failed for " << to_string(method) << " at N=" << n << ": max deviation " << dev
               << " exceeds " << spec.gate_tolerance();
            throw ValidationError(os.str());
          }
          result.notes.push_back("gate " + std::string(to_string(method)) + " N=" + std::to_string(n) +
                                 " max deviation " + format_real(dev));
        }
      }

      std::vector<double> times;
      CostCounters counters;
      for (std::size_t r = 0; r < spec.repeats; ++r) {
        BatchedTensors timed = inputs;
        const RunOutput out = run_once(timed);
        times.push_back(out.seconds);
        counters = out.counters;
      }
      std::ranges::sort(times);

      BenchRow row;
      row.method = std::string(to_string(method));
      row.seq_len = n;
      row.batch = batch;
      row.head_dim = d;
      row.n_heads = spec.n_heads();
      row.causal = spec.causal;
      row.pass = std::string(to_string(spec.pass));
      row.wall_time_s = times[times.size() / 2];
      const std::uint64_t fwd =
          flops_forward_model(static_cast<std::int64_t>(n), static_cast<std::int64_t>(d),
                              static_cast<std::int64_t>(spec.n_heads()), spec.causal) *
          batch;
      switch (spec.pass) {
        case BenchPass::kForward: row.model_flops = fwd; break;
        case BenchPass::kBackward: row.model_flops = flops_backward_model(fwd); break;
        case BenchPass::kForwardBackward: row.model_flops = fwd + flops_backward_model(fwd); break;
      }
      row.achieved_flops_per_s = static_cast<double>(row.model_flops) / row.wall_time_s;
      row.counters = snapshot(counters);
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

std::string format_csv(const std::vector<BenchRow>& rows) {
  if (rows.empty()) throw ContractError("emit_csv: no rows");
  std::string out = csv_header();
  for (const BenchRow& r : rows) {
    out += r.method + ',' + std::to_string(r.seq_len) + ',' + std::to_string(r.batch) + ',' +
           std::to_string(r.head_dim) + ',' + std::to_string(r.n_heads) + ',' + (r.causal ? "true" : "false") + ',' +
           r.pass + ',' + format_real(r.wall_time_s) + ',' + std::to_string(r.model_flops) + ',' +
           format_real(r.achieved_flops_per_s);
    for (std::uint64_t v : r.counters.values()) out += ',' + std::to_string(v);
    out += '\n';
  }
  return out;
}

void emit_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path) {
  const std::string text = format_csv(rows);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open '" + path.string() + "' for writing");
  file << text;
  file.flush();
  if (!file) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<BenchRow> parse_csv(std::string_view text) {
  std::vector<std::string_view> lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ValidationError("csv: empty input");
  const std::string header = csv_header();
  if (lines.front() != std::string_view(header).substr(0, header.size() - 1))
    throw ValidationError("csv: unexpected header");

  constexpr std::size_t kColumns = kLeadingColumns.size() + CounterSnapshot::kKeys.size();
  std::vector<BenchRow> rows;
  for (std::size_t l = 1; l < lines.size(); ++l) {
    const auto f = split(lines[l], ',');
    if (f.size() != kColumns) throw ValidationError("csv: line " + std::to_string(l + 1) + " has wrong column count");
    BenchRow r;
    r.method = std::string(f[0]);
    r.seq_len = parse_number<std::size_t>(f[1], "seq_len");
    r.batch = parse_number<std::size_t>(f[2], "batch");
    r.head_dim = parse_number<std::size_t>(f[3], "head_dim");
    r.n_heads = parse_number<std::size_t>(f[4], "n_heads");
    if (f[5] != "true" && f[5] != "false") throw ValidationError("csv: causal must be true or false");
    r.causal = f[5] == "true";
    r.pass = std::string(f[6]);
    r.wall_time_s = parse_number<double>(f[7], "wall_time_s");
    r.model_flops = parse_number<std::uint64_t>(f[8], "model_flops");
    r.achieved_flops_per_s = parse_number<double>(f[9], "achieved_flops_per_s");
    std::array<std::uint64_t, 8> values{};
    for (std::size_t k = 0; k < values.size(); ++k)
      values[k] = parse_number<std::uint64_t>(f[kLeadingColumns.size() + k], CounterSnapshot::kKeys[k]);
    r.counters = CounterSnapshot::from_values(values);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string compare_report(const std::vector<BenchRow>& rows, const CostModel& model) {
  std::ostringstream os;
  os << "Results (median wall time; predicted = roofline from counters)\n";
  os << std::left << std::setw(15) << "method" << std::right << std::setw(8) << "seq_len" << std::setw(6) << "batch"
     << std::setw(5) << "d" << std::setw(6) << "heads" << std::setw(7) << "causal" << std::setw(8) << "pass"
     << std::setw(13) << "wall_s" << std::setw(11) << "GFLOP/s" << std::setw(13) << "predicted_s" << "  bound\n";
  for (const BenchRow& r : rows) {
    const RuntimePrediction p = predict_runtime(r.counters, model);
    os << std::left << std::setw(15) << r.method << std::right << std::setw(8) << r.seq_len << std::setw(6) << r.batch
       << std::setw(5) << r.head_dim << std::setw(6) << r.n_heads << std::setw(7) << (r.causal ? "yes" : "no")
       << std::setw(8) << r.pass << std::setw(13) << std::setprecision(6) << std::defaultfloat << r.wall_time_s
       << std::setw(11) << format_gflops(r.achieved_flops_per_s) << std::setw(13) << std::setprecision(4)
       << p.seconds << "  " << to_string(p.bound) << '\n';
  }

  using ConfigKey = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, bool, std::string>;
  std::map<ConfigKey, std::vector<const BenchRow*>> by_config;
  for (const BenchRow& r : rows) by_config[{r.seq_len, r.batch, r.head_dim, r.n_heads, r.causal, r.pass}].push_back(&r);

  os << "\nMethod speedups (wall time of a / wall time of b)\n";
  std::size_t pairs = 0;
  for (const auto& [key, group] : by_config) {
    for (std::size_t a = 0; a < group.size(); ++a)
      for (std::size_t b = a + 1; b < group.size(); ++b) {
        if (group[a]->method == group[b]->method) continue;
        ++pairs;
        os << "  N=" << std::get<0>(key) << " batch=" << std::get<1>(key) << " d=" << std::get<2>(key)
           << " heads=" << std::get<3>(key) << " causal=" << (std::get<4>(key) ? "yes" : "no")
           << " pass=" << std::get<5>(key) << ": " << group[a]->method << "/" << group[b]->method << " = "
           << std::fixed << std::setprecision(3) << group[a]->wall_time_s / group[b]->wall_time_s << std::defaultfloat
           << '\n';
      }
  }
  if (pairs == 0) os << "  no comparable pairs\n";

  os << "\nCausal vs non-causal (causal / non-causal)\n";
  std::size_t causal_pairs = 0;
  for (const BenchRow& c : rows) {
    if (!c.causal) continue;
    for (const BenchRow& f : rows) {
      if (f.causal || f.method != c.method || f.seq_len != c.seq_len || f.batch != c.batch ||
          f.head_dim != c.head_dim || f.n_heads != c.n_heads || f.pass != c.pass)
        continue;
      ++causal_pairs;
      os << "  " << c.method << " N=" << c.seq_len << " pass=" << c.pass << ": wall time " << std::fixed
         << std::setprecision(3) << c.wall_time_s / f.wall_time_s << ", matmul FLOPs " << std::setprecision(4)
         << static_cast<double>(c.counters.matmul_flops) / static_cast<double>(f.counters.matmul_flops)
         << std::defaultfloat << '\n';
    }
  }
  if (causal_pairs == 0) os << "  no comparable pairs\n";

  const bool has_backward = std::ranges::any_of(rows, [](const BenchRow& r) { return r.pass != "fwd"; });
  if (has_backward)
    os << "\nNote: backward model FLOPs are 2.5x forward and include the recomputation of S and P, which\n"
          "inflates backward throughput relative to strictly useful work.\n";
  return os.str();
}

}  // namespace flashattn
