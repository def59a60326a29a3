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

#ifndef FIXPT_IMPLICIT_GRAD_HPP
#define FIXPT_IMPLICIT_GRAD_HPP

#include "fixpt/anderson.hpp"
#include "fixpt/dense.hpp"
#include "fixpt/state.hpp"

namespace fixpt {

/// Central-difference Jacobian df/dz of a single-row state, d <= 64.
Matrix jacobian_fd(const FixedPointMap& f, const StateBatch& z, const StateBatch& x,
                   double h = 1e-5);

struct AdjointResult {
  StateBatch u;
  SolverTrace trace;
};

/// Solves u^T = v^T + u^T df/dz at (z_star, x) by fixed-point iteration
/// started from u = v. On return
///   mean_b ||v - u (I - J)|| / (||v|| + lambda) < cfg.tol.
/// Throws Divergence if the iteration stalls at max_iter.
AdjointResult adjoint_solve(const DifferentiableMap& f, const StateBatch& z_star,
                            const StateBatch& x, const StateBatch& v, const AndersonConfig& cfg,
                            SolverKind kind = SolverKind::Anderson);

struct GradResult {
  StateBatch grad_x;
  Vector grad_params;
  SolverTrace adjoint_trace;
};

/// dl/dx and dl/dtheta through the equilibrium from dl/dz* (one adjoint solve).
GradResult implicit_gradients(const DifferentiableMap& f, const StateBatch& x,
                              const StateBatch& z_star, const StateBatch& loss_grad,
                              const AndersonConfig& cfg, SolverKind kind = SolverKind::Anderson);

StateBatch grad_input(const DifferentiableMap& f, const StateBatch& x, const StateBatch& z_star,
                      const StateBatch& loss_grad, const AndersonConfig& cfg,
                      SolverKind kind = SolverKind::Anderson);

Vector grad_params(const DifferentiableMap& f, const StateBatch& x, const StateBatch& z_star,
                   const StateBatch& loss_grad, const AndersonConfig& cfg,
                   SolverKind kind = SolverKind::Anderson);

}  // namespace fixpt

#endif  // FIXPT_IMPLICIT_GRAD_HPP
