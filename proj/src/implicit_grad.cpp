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

#include "fixpt/implicit_grad.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fixpt/errors.hpp"

namespace fixpt {

namespace {

// u -> v + u^T J, with v passed through the solver's input slot.
class AdjointMap final : public FixedPointMap {
 public:
  AdjointMap(const DifferentiableMap& f, const StateBatch& z_star, const StateBatch& x)
      : f_(f), z_star_(z_star), x_(x) {}

  StateBatch eval(const StateBatch& u, const StateBatch& v) const override {
    StateBatch out = f_.vjp_state(z_star_, x_, u);
    for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += v.values()[i];
    return out;
  }
  std::size_t state_dim() const override { return f_.state_dim(); }

 private:
  const DifferentiableMap& f_;
  const StateBatch& z_star_;
  const StateBatch& x_;
};

// mean_b ||g(u) - u|| / (||v|| + lambda) where g(u) - u = v - u (I - J).
double adjoint_residual(const StateBatch& gu, const StateBatch& u, const StateBatch& v,
                        double lambda) {
  double sum = 0.0;
  Vector diff(u.dim());
  for (std::size_t b = 0; b < u.batch(); ++b) {
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = gu(b, j) - u(b, j);
    const double num = norm2(diff);
    if (num == 0.0) continue;
    sum += num / (norm2(v.row(b)) + lambda);
  }
  return sum / static_cast<double>(std::max<std::size_t>(u.batch(), 1));
}

void append_trace(SolverTrace& into, const SolverTrace& more) {
  const std::size_t k0 = into.iterations.size();
  const std::size_t f0 = into.fevals();
  const double t0 = into.iterations.empty() ? 0.0 : into.iterations.back().elapsed_seconds;
  for (IterationRecord r : more.iterations) {
    r.k += k0;
    r.fevals += f0;
    r.elapsed_seconds += t0;
    into.iterations.push_back(r);
  }
  into.converged = more.converged;
  into.final_state = more.final_state;
}

}  // namespace

Matrix jacobian_fd(const FixedPointMap& f, const StateBatch& z, const StateBatch& x, double h) {
  if (z.batch() != 1) throw InvalidArgument("jacobian_fd: expects a single-row state");
  if (z.dim() > 64) throw InvalidArgument("jacobian_fd: limited to d <= 64");
  if (!(h > 0.0)) throw InvalidArgument("jacobian_fd: step must be > 0");
  const std::size_t d = z.dim();
  Matrix jac(d, d);
  StateBatch zp = z;
  for (std::size_t j = 0; j < d; ++j) {
    const double orig = zp(0, j);
    zp(0, j) = orig + h;
    const StateBatch fp = f.eval(zp, x);
    zp(0, j) = orig - h;
    const StateBatch fm = f.eval(zp, x);
    zp(0, j) = orig;
    for (std::size_t i = 0; i < d; ++i) {
      jac(i, j) = (fp(0, i) - fm(0, i)) / (2.0 * h);
    }
  }
  if (!jac.all_finite()) throw Divergence("jacobian_fd: non-finite difference quotient", 0);
  return jac;
}

AdjointResult adjoint_solve(const DifferentiableMap& f, const StateBatch& z_star,
                            const StateBatch& x, const StateBatch& v, const AndersonConfig& cfg,
                            SolverKind kind) {
  cfg.validate();
  if (!v.same_shape(z_star)) throw InvalidArgument("adjoint_solve: v must match z_star's shape");
  const AdjointMap g(f, z_star, x);

  // u is linear in v, so solve for unit-norm rows and rescale afterwards.
  // The Tikhonov term in the Anderson step is absolute; without this a tiny
  // upstream gradient would be swamped by it.
  Vector row_scale(v.batch(), 0.0);
  StateBatch v_unit = v;
  for (std::size_t b = 0; b < v.batch(); ++b) {
    row_scale[b] = norm2(v.row(b));
    if (row_scale[b] > 0.0) {
      for (double& e : v_unit.row(b)) e /= row_scale[b];
    }
  }
  auto rescale = [&row_scale](StateBatch u) {
    for (std::size_t b = 0; b < u.batch(); ++b)
      for (double& e : u.row(b)) e *= row_scale[b];
    return u;
  };

  // The solver normalizes by ||g(u)||, the contract by ||v||; tighten the
  // solver tolerance until the contract holds.
  constexpr int kMaxRefinements = 6;
  AndersonConfig round_cfg = cfg;
  AdjointResult out;
  StateBatch u0 = v_unit;
  for (int round = 0; round <= kMaxRefinements; ++round) {
    SolverTrace t = solve(kind, g, v_unit, u0, round_cfg);
    append_trace(out.trace, t);
    if (!t.converged) {
      throw Divergence("adjoint solve did not reach tol " + std::to_string(round_cfg.tol),
                       out.trace.iterations.size());
    }
    StateBatch u = rescale(t.final_state);
    const StateBatch gu = g.eval(u, v);
    const double contract_res = adjoint_residual(gu, u, v, cfg.lambda);
    if (contract_res < cfg.tol) {
      out.u = std::move(u);
      out.trace.final_state = out.u;
      return out;
    }
    const double solver_res = std::max(t.final_residual(), 1e-300);
    round_cfg.tol = std::min(round_cfg.tol, cfg.tol * solver_res / contract_res) * 0.5;
    u0 = std::move(t.final_state);
  }
  throw Divergence("adjoint solve could not meet its residual contract",
                   out.trace.iterations.size());
}

GradResult implicit_gradients(const DifferentiableMap& f, const StateBatch& x,
                              const StateBatch& z_star, const StateBatch& loss_grad,
                              const AndersonConfig& cfg, SolverKind kind) {
  AdjointResult adj = adjoint_solve(f, z_star, x, loss_grad, cfg, kind);
  GradResult out;
  out.grad_x = f.vjp_input(z_star, x, adj.u);
  out.grad_params = f.vjp_params(z_star, x, adj.u);
  out.adjoint_trace = std::move(adj.trace);
  return out;
}

StateBatch grad_input(const DifferentiableMap& f, const StateBatch& x, const StateBatch& z_star,
                      const StateBatch& loss_grad, const AndersonConfig& cfg, SolverKind kind) {
  const AdjointResult adj = adjoint_solve(f, z_star, x, loss_grad, cfg, kind);
  return f.vjp_input(z_star, x, adj.u);
}

Vector grad_params(const DifferentiableMap& f, const StateBatch& x, const StateBatch& z_star,
                   const StateBatch& loss_grad, const AndersonConfig& cfg, SolverKind kind) {
  const AdjointResult adj = adjoint_solve(f, z_star, x, loss_grad, cfg, kind);
  return f.vjp_params(z_star, x, adj.u);
}

}  // namespace fixpt
