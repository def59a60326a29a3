/*
 * Copyright 2026 The fixpt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FIXPT_BENCH_HPP
#define FIXPT_BENCH_HPP

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fixpt/anderson.hpp"
#include "fixpt/problems.hpp"

namespace fixpt {

/// A residual history as stored on disk. `name` labels plots and errors.
struct Trace {
  std::string name;
  std::vector<IterationRecord> records;
};

Trace trace_from_solver(std::string name, const SolverTrace& t);

/// Header `k,fevals,residual,elapsed_seconds`; residual in %.12e.
std::string trace_to_csv(const Trace& t);
/// Throws ParseError with the offending line number.
Trace trace_from_csv(std::string_view text, std::string name);

void write_trace_csv(const std::filesystem::path& path, const Trace& t);
/// Name defaults to the file stem. IoError when unreadable.
Trace read_trace_csv(const std::filesystem::path& path);

/// Piecewise-linear interpolation of log(residual) against elapsed time.
/// Clamped to the first/last record outside the recorded range.
double residual_at_time(const Trace& t, double seconds);

struct CrossoverReport {
  std::optional<double> crossover_time_seconds;
  std::optional<double> mixing_penalty_ratio;
  /// (tol, forward time / anderson time); filled by run_bench only.
  std::vector<std::pair<double, std::optional<double>>> speedup_to_tol;
};

/// Evaluates both traces on the union of their recorded times inside the
/// overlapping time range. The crossover is the earliest such time from which
/// on `anderson` is never above `forward`; the penalty is the largest
/// anderson/forward ratio before it (1 when the crossover is the first point).
CrossoverReport detect_crossover(const Trace& forward, const Trace& anderson);

enum class TraceAxis { Seconds, Fevals };

/// Interpolated position where the residual first drops below tol, or nullopt.
std::optional<double> time_to_tol(const Trace& t, double tol,
                                  TraceAxis axis = TraceAxis::Seconds);

/// time_to_tol(b) / time_to_tol(a). NotReached names the trace that misses tol.
double speedup(const Trace& a, const Trace& b, double tol,
               TraceAxis axis = TraceAxis::Seconds);

/// Two panels, residual against iteration and against wall-clock, log10
/// residual axis. The marker is drawn on the time panel.
std::string plot_svg(const std::vector<Trace>& traces,
                     const std::optional<CrossoverReport>& crossover = std::nullopt);

struct SolverSpec {
  std::string name;
  SolverKind kind = SolverKind::Anderson;
  AndersonConfig cfg;
};

struct BenchConfig {
  ProblemSpec problem;
  std::vector<SolverSpec> solvers;
  std::size_t repetitions = 1;
  std::string output_dir = "out";  ///< as written in the config
  std::filesystem::path base_dir;    ///< directory holding the config file
  std::vector<double> tolerances;

  std::filesystem::path resolved_output_dir() const;

  /// Throws ParseError for malformed JSON and InvalidArgument for bad
  /// fields; both messages carry "line N" and the field path.
  static BenchConfig from_json(std::string_view text,
                               const std::filesystem::path& base_dir = {});
  static BenchConfig load(const std::filesystem::path& path);
  std::string to_json() const;
};

struct RunOptions {
  bool parallel = false;  ///< repetitions fan out over threads; timings are then untrusted
  std::optional<std::filesystem::path> output_dir;
};

struct SolverOutcome {
  std::string name;
  std::string status;  ///< converged | max_iter | diverged
  std::string message;
  std::size_t fevals = 0;
  double final_residual = 0.0;
  std::optional<Trace> trace;  ///< residuals of run 1, median elapsed time
};

struct BenchResult {
  std::vector<SolverOutcome> solvers;
  std::optional<CrossoverReport> crossover;
  std::string summary_json;
  bool any_diverged = false;
};

/// Writes <name>_rep<r>.csv for each solver and repetition, <name>.csv with
/// the median timing, plot.svg and summary.json into the output directory.
BenchResult run_bench(const BenchConfig& cfg, const RunOptions& opts = {});

}  // namespace fixpt

#endif  // FIXPT_BENCH_HPP
