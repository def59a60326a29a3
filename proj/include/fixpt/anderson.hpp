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

#ifndef FIXPT_ANDERSON_HPP
#define FIXPT_ANDERSON_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "fixpt/dense.hpp"
#include "fixpt/state.hpp"

namespace fixpt {

/// Hyperparameters of windowed Anderson extrapolation. The defaults are the
/// customary DEQ settings.
struct AndersonConfig {
  std::size_t m = 5;         ///< window size
  double lambda = 1e-5;      ///< Tikhonov term on G^T G, also the residual floor
  double beta = 1.0;         ///< mixing; beta < 1 keeps part of the old iterates
  double tol = 1e-2;         ///< stop once the relative residual drops below this
  std::size_t max_iter = 1000;

  /// Throws InvalidArgument unless m >= 1, lambda >= 0, 0 < beta <= 1,
  /// tol > 0 and max_iter >= 2.
  void validate() const;
};

struct IterationRecord {
  std::size_t k = 0;
  double residual = 0.0;
  double elapsed_seconds = 0.0;  ///< cumulative since the solve started
  std::size_t fevals = 0;        ///< cumulative map evaluations
};

struct SolverTrace {
  std::vector<IterationRecord> iterations;
  bool converged = false;
  StateBatch final_state;
  /// Iterate z^k behind each record; filled only with SolveOptions::keep_iterates.
  std::vector<StateBatch> iterates;

  std::size_t fevals() const { return iterations.empty() ? 0 : iterations.back().fevals; }
  double final_residual() const;
};

struct SolveOptions {
  bool keep_iterates = false;
};

/// Monotonic clock in seconds.
double wall_clock();

/// Batch mean of ||fz - z|| / (||fz|| + lambda) over rows. A row whose
/// numerator is 0 contributes 0; a row with zero denominator and nonzero
/// numerator makes the result +inf.
double relative_residual(const StateBatch& fz, const StateBatch& z, double lambda);

/// Ring buffer of the last m (iterate, image) pairs. Pair k lives in slot
/// k mod m. Columns are addressed oldest-first.
class History {
 public:
  History(std::size_t m, std::size_t batch, std::size_t dim);

  void push(const StateBatch& z, const StateBatch& fz);

  std::size_t size() const noexcept { return pushed_ < m_ ? pushed_ : m_; }
  std::size_t capacity() const noexcept { return m_; }
  std::size_t write_slot() const noexcept { return pushed_ % m_; }
  std::size_t batch() const noexcept { return batch_; }
  std::size_t dim() const noexcept { return dim_; }

  /// Column i (0 = oldest populated) for batch row b.
  std::span<const double> iterate(std::size_t i, std::size_t b) const;
  std::span<const double> image(std::size_t i, std::size_t b) const;

 private:
  std::size_t slot_of(std::size_t i) const;

  std::size_t m_;
  std::size_t batch_;
  std::size_t dim_;
  std::size_t pushed_ = 0;
  std::vector<StateBatch> x_;
  std::vector<StateBatch> f_;
};

struct AndersonStep {
  StateBatch next;
  std::vector<Vector> alpha;  ///< one coefficient vector per batch row, oldest first
};

/// One extrapolation over every populated history column. `step` is only
/// used to label a SingularSystem error.
AndersonStep anderson_step(const History& history, double lambda, double beta, long step = -1);

SolverTrace forward_iterate(const FixedPointMap& f, const StateBatch& x, const StateBatch& z0,
                            double tol, std::size_t max_iter, double lambda,
                            const SolveOptions& opts = {});

SolverTrace anderson_iterate(const FixedPointMap& f, const StateBatch& x, const StateBatch& z0,
                             const AndersonConfig& cfg, const SolveOptions& opts = {});

enum class SolverKind { Forward, Anderson };

const char* to_string(SolverKind kind);
SolverKind solver_kind_from_string(const char* name);

/// Dispatches on `kind`; the forward solver uses cfg.tol, cfg.max_iter and
/// cfg.lambda and ignores the rest.
SolverTrace solve(SolverKind kind, const FixedPointMap& f, const StateBatch& x,
                  const StateBatch& z0, const AndersonConfig& cfg,
                  const SolveOptions& opts = {});

}  // namespace fixpt

#endif  // FIXPT_ANDERSON_HPP
