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

#ifndef FIXPT_PROBLEMS_HPP
#define FIXPT_PROBLEMS_HPP

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fixpt/dense.hpp"
#include "fixpt/state.hpp"

namespace fixpt {

/// f(z, x) = A z + c. The input x is accepted and ignored; the map has no
/// trainable parameters.
class AffineMap final : public DifferentiableMap {
 public:
  AffineMap(Matrix a, Vector c);

  StateBatch eval(const StateBatch& z, const StateBatch& x) const override;
  std::size_t state_dim() const override { return a_.rows(); }

  StateBatch vjp_state(const StateBatch& z, const StateBatch& x,
                       const StateBatch& v) const override;
  StateBatch vjp_input(const StateBatch& z, const StateBatch& x,
                       const StateBatch& v) const override;
  std::vector<double> vjp_params(const StateBatch&, const StateBatch&,
                                 const StateBatch&) const override {
    return {};
  }
  std::size_t param_count() const override { return 0; }

  const Matrix& matrix() const noexcept { return a_; }
  const Vector& offset() const noexcept { return c_; }

 private:
  Matrix a_;
  Vector c_;
};

struct LinearContraction {
  Matrix a;
  Vector b;
  double spectral_radius_bound = 0.0;

  AffineMap map() const { return AffineMap(a, b); }
};

/// A = rho Q D Q^T with Q a seeded random orthogonal matrix and D diagonal
/// with entries in [0.3, 1.0], so rho(A) <= rho.
LinearContraction make_linear_contraction(std::size_t d, double rho, std::uint64_t seed);

/// (I - A)^{-1} b by dense solve.
Vector analytic_fixed_point(const LinearContraction& p);

/// z* = tanh(W z* + U x + b).
struct SimpleDeq {
  Matrix w;  ///< d x d
  Matrix u;  ///< d x dx
  Vector b;
};

/// W = rho Q1 D Q2^T so that ||W||_2 <= rho < 1 and the map contracts.
SimpleDeq make_simple_deq(std::size_t d, std::size_t dx, double rho, std::uint64_t seed);

/// Parameters are ordered W, U, b (row-major).
class SimpleDeqMap final : public DifferentiableMap {
 public:
  explicit SimpleDeqMap(SimpleDeq p);

  StateBatch eval(const StateBatch& z, const StateBatch& x) const override;
  std::size_t state_dim() const override { return p_.w.rows(); }
  std::size_t input_dim() const override { return p_.u.cols(); }

  StateBatch vjp_state(const StateBatch& z, const StateBatch& x,
                       const StateBatch& v) const override;
  StateBatch vjp_input(const StateBatch& z, const StateBatch& x,
                       const StateBatch& v) const override;
  std::vector<double> vjp_params(const StateBatch& z, const StateBatch& x,
                                 const StateBatch& v) const override;
  std::size_t param_count() const override;

  const SimpleDeq& problem() const noexcept { return p_; }

 private:
  // 1 - tanh^2 at each entry of the pre-activation, row by row.
  StateBatch activation_slope(const StateBatch& z, const StateBatch& x) const;
  SimpleDeq p_;
};

SimpleDeqMap simple_deq_map(const SimpleDeq& p);

/// Fast deterministic test maps with known fixed points.
struct ProbeProblem {
  std::string name;
  std::shared_ptr<const FixedPointMap> map;
  StateBatch x;
  StateBatch z0;
  Vector fixed_point;
};

/// affine z <- 0.5 z + 1 (z* = 2), tanh z <- tanh(0.5 z) (z* = 0),
/// saturating z <- min(0.5 z + 1, 1.5) (z* = 1.5), and a 2-D scaled
/// rotation z <- 0.8 R(pi/3) z + (1, -0.5).
std::vector<ProbeProblem> scalar_probe_suite();

/// Benchmark problem description, serialized as the "problem" object of a
/// bench config. kind is one of linear_contraction, simple_deq, deq.
struct ProblemSpec {
  std::string kind;
  std::size_t d = 0;
  double rho = 0.9;
  std::uint64_t seed = 0;
  std::size_t hidden = 0;     ///< deq only; 0 means 2 d
  std::size_t groups = 2;     ///< deq only
  std::size_t input_dim = 0;  ///< simple_deq only; 0 means d
  std::size_t batch = 1;

  std::string to_json() const;
  /// Throws InvalidArgument naming the offending field as "<prefix>.<field>".
  static ProblemSpec from_json(std::string_view text, const std::string& prefix = "problem");
};

struct BenchProblem {
  std::shared_ptr<const FixedPointMap> map;
  StateBatch x;
  StateBatch z0;
  std::optional<Vector> fixed_point;  ///< per-row solution when known analytically
};

/// Instantiates the map, a seeded Gaussian input x and z0 = 0.
BenchProblem build_problem(const ProblemSpec& spec);

}  // namespace fixpt

#endif  // FIXPT_PROBLEMS_HPP
