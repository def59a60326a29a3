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

#include "fixpt/anderson.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "fixpt/errors.hpp"

namespace fixpt {

namespace {

void check_shapes(const FixedPointMap& f, const StateBatch& x, const StateBatch& z0) {
  if (z0.dim() != f.state_dim() || z0.dim() == 0) {
    throw InvalidArgument("solver: initial state has dim " + std::to_string(z0.dim()) +
                          ", map expects " + std::to_string(f.state_dim()));
  }
  if (x.batch() != z0.batch() || x.dim() != f.input_dim()) {
    throw InvalidArgument("solver: input batch shape does not match the map");
  }
}

StateBatch eval_checked(const FixedPointMap& f, const StateBatch& z, const StateBatch& x,
                        std::size_t k) {
  StateBatch fz = f.eval(z, x);
  if (!fz.same_shape(z)) throw InvalidArgument("solver: map changed the batch shape");
  if (!fz.all_finite()) throw Divergence("non-finite map output", k);
  return fz;
}

class Recorder {
 public:
  Recorder(SolverTrace& trace, const SolveOptions& opts)
      : trace_(trace), opts_(opts), start_(wall_clock()) {}

  void record(std::size_t k, double residual, std::size_t fevals, const StateBatch& z) {
    trace_.iterations.push_back({k, residual, wall_clock() - start_, fevals});
    if (opts_.keep_iterates) trace_.iterates.push_back(z);
  }

 private:
  SolverTrace& trace_;
  const SolveOptions& opts_;
  double start_;
};

}  // namespace

void AndersonConfig::validate() const {
  if (m < 1) throw InvalidArgument("AndersonConfig.m must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw InvalidArgument("AndersonConfig.lambda must be finite and >= 0");
  if (!(beta > 0.0 && beta <= 1.0)) throw InvalidArgument("AndersonConfig.beta must lie in (0, 1]");
  if (!(tol > 0.0)) throw InvalidArgument("AndersonConfig.tol must be > 0");
  if (max_iter < 2) throw InvalidArgument("AndersonConfig.max_iter must be >= 2");
}

double SolverTrace::final_residual() const {
  return iterations.empty() ? std::numeric_limits<double>::infinity()
                            : iterations.back().residual;
}

double wall_clock() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

double relative_residual(const StateBatch& fz, const StateBatch& z, double lambda) {
  if (!fz.same_shape(z)) throw InvalidArgument("relative_residual: shape mismatch");
  if (fz.batch() == 0) return 0.0;
  double sum = 0.0;
  Vector diff(z.dim());
  for (std::size_t b = 0; b < z.batch(); ++b) {
    const auto fr = fz.row(b);
    const auto zr = z.row(b);
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = fr[j] - zr[j];
    const double num = norm2(diff);
    if (num == 0.0) continue;
    const double den = norm2(fr) + lambda;
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    sum += num / den;
  }
  return sum / static_cast<double>(z.batch());
}

History::History(std::size_t m, std::size_t batch, std::size_t dim)
    : m_(m), batch_(batch), dim_(dim) {
  if (m == 0) throw InvalidArgument("History: window must be >= 1");
  x_.assign(m, StateBatch(batch, dim));
  f_.assign(m, StateBatch(batch, dim));
}

void History::push(const StateBatch& z, const StateBatch& fz) {
  if (z.batch() != batch_ || z.dim() != dim_ || !fz.same_shape(z)) {
    throw InvalidArgument("History::push: shape mismatch");
  }
  const std::size_t slot = write_slot();
  x_[slot] = z;
  f_[slot] = fz;
  ++pushed_;
}

std::size_t History::slot_of(std::size_t i) const {
  const std::size_t n = size();
  if (i >= n) throw InvalidArgument("History: column index out of range");
  return (pushed_ - n + i) % m_;
}

std::span<const double> History::iterate(std::size_t i, std::size_t b) const {
  return x_[slot_of(i)].row(b);
}

std::span<const double> History::image(std::size_t i, std::size_t b) const {
  return f_[slot_of(i)].row(b);
}

AndersonStep anderson_step(const History& history, double lambda, double beta, long step) {
  const std::size_t n = history.size();
  const std::size_t d = history.dim();
  if (n == 0) throw InvalidArgument("anderson_step: empty history");
  if (!(beta > 0.0 && beta <= 1.0)) throw InvalidArgument("anderson_step: beta must lie in (0, 1]");

  AndersonStep out;
  out.next = StateBatch(history.batch(), d);
  out.alpha.reserve(history.batch());

  Matrix g(d, n);
  for (std::size_t b = 0; b < history.batch(); ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = history.iterate(i, b);
      const auto fi = history.image(i, b);
      for (std::size_t r = 0; r < d; ++r) g(r, i) = fi[r] - xi[r];
    }
    AndersonStepSolution sol = solve_bordered(gram(g, lambda), step);

    Vector mixed_x(d, 0.0);
    Vector mixed_f(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = sol.alpha[i];
      const auto xi = history.iterate(i, b);
      const auto fi = history.image(i, b);
      for (std::size_t r = 0; r < d; ++r) {
        mixed_x[r] += a * xi[r];
        mixed_f[r] += a * fi[r];
      }
    }
    auto next = out.next.row(b);
    for (std::size_t r = 0; r < d; ++r) next[r] = (1.0 - beta) * mixed_x[r] + beta * mixed_f[r];
    out.alpha.push_back(std::move(sol.alpha));
  }
  return out;
}

SolverTrace forward_iterate(const FixedPointMap& f, const StateBatch& x, const StateBatch& z0,
                            double tol, std::size_t max_iter, double lambda,
                            const SolveOptions& opts) {
  check_shapes(f, x, z0);
  if (!(tol > 0.0)) throw InvalidArgument("forward_iterate: tol must be > 0");
  if (max_iter < 1) throw InvalidArgument("forward_iterate: max_iter must be >= 1");
  if (!z0.all_finite()) throw Divergence("non-finite initial state", 0);

  SolverTrace trace;
  Recorder rec(trace, opts);
  StateBatch z = z0;
  for (std::size_t k = 0; k < max_iter; ++k) {
    StateBatch fz = eval_checked(f, z, x, k);
    const double res = relative_residual(fz, z, lambda);
    rec.record(k, res, k + 1, z);
    if (res < tol) {
      trace.converged = true;
      break;
    }
    if (k + 1 < max_iter) z = std::move(fz);
  }
  trace.final_state = std::move(z);
  return trace;
}

SolverTrace anderson_iterate(const FixedPointMap& f, const StateBatch& x, const StateBatch& z0,
                             const AndersonConfig& cfg, const SolveOptions& opts) {
  cfg.validate();
  check_shapes(f, x, z0);
  if (!z0.all_finite()) throw Divergence("non-finite initial state", 0);

  SolverTrace trace;
  Recorder rec(trace, opts);
  History history(cfg.m, z0.batch(), z0.dim());

  StateBatch z = z0;
  std::size_t fevals = 0;
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    if (k >= 2) {
      z = anderson_step(history, cfg.lambda, cfg.beta, static_cast<long>(k)).next;
      if (!z.all_finite()) throw Divergence("non-finite Anderson iterate", k);
    }
    StateBatch fz = eval_checked(f, z, x, k);
    ++fevals;
    const double res = relative_residual(fz, z, cfg.lambda);
    rec.record(k, res, fevals, z);
    history.push(z, fz);
    if (res < cfg.tol) {
      trace.converged = true;
      break;
    }
    // The second initialization pair is (f(z0), f(f(z0))).
    if (k == 0) z = std::move(fz);
  }
  trace.final_state = std::move(z);
  return trace;
}

const char* to_string(SolverKind kind) {
  return kind == SolverKind::Forward ? "forward" : "anderson";
}

SolverKind solver_kind_from_string(const char* name) {
  const std::string_view s = name ? name : "";
  if (s == "forward") return SolverKind::Forward;
  if (s == "anderson") return SolverKind::Anderson;
  throw InvalidArgument("unknown solver kind '" + std::string(s) +
                        "' (expected forward or anderson)");
}

SolverTrace solve(SolverKind kind, const FixedPointMap& f, const StateBatch& x,
                  const StateBatch& z0, const AndersonConfig& cfg, const SolveOptions& opts) {
  if (kind == SolverKind::Forward) {
    return forward_iterate(f, x, z0, cfg.tol, cfg.max_iter, cfg.lambda, opts);
  }
  return anderson_iterate(f, x, z0, cfg, opts);
}

}  // namespace fixpt
