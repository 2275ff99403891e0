// flashbench: sequence-length sweep at a fixed token budget.
//
// Exit codes: 0 success, 2 config error, 3 correctness gate failure, 4 IO error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "flashattn/bench.hpp"
#include "flashattn/errors.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitGate = 3;
constexpr int kExitIo = 4;

}  // namespace

int main(int argc, char** argv) {
  using namespace flashattn;

  BenchSpec spec;
  std::vector<std::string> methods;
  std::string pass = "fwd";
  std::string dq_merge = "buffered";
  std::string csv_path;
  std::string report_path;
  bool reduced = false;

  CLI::App app{"Tiled attention benchmark: naive vs flash-serial vs flash-parallel"};
  app.add_option("--seq-lens", spec.seq_lens, "Sequence lengths to sweep")->delimiter(',');
  app.add_option("--token-budget", spec.token_budget, "Tokens per configuration; batch = budget / seq_len");
  app.add_option("--head-dim", spec.head_dim, "Head dimension d");
  app.add_option("--hidden-dim", spec.hidden_dim, "Hidden dimension; heads = hidden / d");
  app.add_flag("--causal", spec.causal, "Apply the causal mask");
  app.add_option("--methods", methods, "Subset of naive,flash-serial,flash-parallel")->delimiter(',');
  app.add_option("--pass", pass, "fwd, bwd or fwd-bwd");
  app.add_option("--repeats", spec.repeats, "Timed runs per configuration (median reported)");
  app.add_option("--seed", spec.seed, "Input seed");
  app.add_option("--workers", spec.workers, "Worker threads for flash-parallel");
  app.add_option("--block-rows", spec.block_rows, "Row block size Br");
  app.add_option("--block-cols", spec.block_cols, "Column block size Bc");
  app.add_flag("--autotune", spec.autotune, "Pick Br, Bc from {64,128}^2 per sequence length");
  app.add_flag("--deterministic,!--no-deterministic", spec.deterministic,
               "Bitwise reproducible parallel backward (default on)");
  app.add_option("--dq-merge", dq_merge, "buffered or atomic");
  app.add_flag("--reduced-precision", reduced, "Round accumulations to 32-bit after each block");
  app.add_option("--csv", csv_path, "Write results as CSV");
  app.add_option("--report", report_path, "Write the comparison report to this file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  BenchResult result;
  try {
    if (!methods.empty()) {
      spec.methods.clear();
      for (const std::string& m : methods) spec.methods.push_back(parse_method(m));
    }
    spec.pass = parse_pass(pass);
    if (dq_merge == "buffered") {
      spec.dq_merge = DqMerge::kBuffered;
    } else if (dq_merge == "atomic") {
      spec.dq_merge = DqMerge::kAtomic;
    } else {
      throw ConfigError("unknown --dq-merge '" + dq_merge + "' (expected buffered or atomic)");
    }
    if (reduced) spec.precision = AccumPrecision::kReduced;
    result = run_benchmark(spec);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitGate;
  }

  for (const std::string& note : result.notes) std::cerr << note << '\n';
  for (const SkippedRun& s : result.skipped)
    std::cerr << "skipped " << s.method << " N=" << s.seq_len << ": " << s.reason << '\n';

  if (result.rows.empty()) {
    std::cerr << "config error: every run was skipped\n";
    return kExitConfig;
  }

  try {
    if (!csv_path.empty()) emit_csv(result.rows, csv_path);
    const std::string report = compare_report(result.rows);
    if (report_path.empty()) {
      std::cout << report;
    } else {
      std::ofstream out(report_path, std::ios::trunc);
      if (!out) throw IoError("cannot open '" + report_path + "' for writing");
      out << report;
      if (!out) throw IoError("failed writing '" + report_path + "'");
    }
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  }
  return 0;
}
