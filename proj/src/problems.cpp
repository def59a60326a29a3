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

#include "fixpt/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <utility>

#include <json.hpp>

#include "fixpt/deq.hpp"
#include "fixpt/errors.hpp"

namespace fixpt {

namespace {

// Modified Gram-Schmidt, run twice per column, on a seeded Gaussian matrix.
Matrix random_orthogonal(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix q(d, d);
  for (double& v : q.data()) v = normal(rng);
  for (std::size_t j = 0; j < d; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < d; ++i) proj += q(i, k) * q(i, j);
        for (std::size_t i = 0; i < d; ++i) q(i, j) -= proj * q(i, k);
      }
    }
    double nrm = 0.0;
    for (std::size_t i = 0; i < d; ++i) nrm += q(i, j) * q(i, j);
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < d; ++i) q(i, j) /= nrm;
  }
  return q;
}

// scale * Q1 diag(diag) Q2^T
Matrix scaled_product(const Matrix& q1, const Vector& diag, const Matrix& q2, double scale) {
  const std::size_t d = diag.size();
  Matrix a(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += q1(i, k) * diag[k] * q2(j, k);
      a(i, j) = scale * s;
    }
  return a;
}

Vector uniform_diag(std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.3, 1.0);
  Vector diag(d);
  for (double& v : diag) v = unif(rng);
  return diag;
}

void check_rho(double rho, const char* who) {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw InvalidArgument(std::string(who) + ": rho must lie in (0, 1)");
  }
}

// z <- min(0.5 z + 1, 1.5)
class SaturatingProbe final : public FixedPointMap {
 public:
  StateBatch eval(const StateBatch& z, const StateBatch&) const override {
    StateBatch out = z;
    for (double& v : out.values()) v = std::min(0.5 * v + 1.0, 1.5);
    return out;
  }
  std::size_t state_dim() const override { return 1; }
};

// z <- tanh(0.5 z)
class TanhProbe final : public FixedPointMap {
 public:
  StateBatch eval(const StateBatch& z, const StateBatch&) const override {
    StateBatch out = z;
    for (double& v : out.values()) v = std::tanh(0.5 * v);
    return out;
  }
  std::size_t state_dim() const override { return 1; }
};

using nlohmann::json;

}  // namespace

AffineMap::AffineMap(Matrix a, Vector c) : a_(std::move(a)), c_(std::move(c)) {
  if (a_.rows() != a_.cols() || a_.rows() != c_.size() || c_.empty()) {
    throw InvalidArgument("AffineMap: A must be d x d and c of length d");
  }
}

StateBatch AffineMap::eval(const StateBatch& z, const StateBatch&) const {
  if (z.dim() != state_dim()) throw InvalidArgument("AffineMap: state dimension mismatch");
  StateBatch out(z.batch(), z.dim());
  for (std::size_t b = 0; b < z.batch(); ++b) {
    const Vector r = matvec(a_, z.row(b));
    for (std::size_t i = 0; i < r.size(); ++i) out(b, i) = r[i] + c_[i];
  }
  return out;
}

StateBatch AffineMap::vjp_state(const StateBatch& z, const StateBatch&, const StateBatch& v) const {
  if (!v.same_shape(z)) throw InvalidArgument("AffineMap::vjp_state: shape mismatch");
  StateBatch out(v.batch(), v.dim());
  for (std::size_t b = 0; b < v.batch(); ++b) {
    const Vector r = matvec_transposed(a_, v.row(b));
    std::copy(r.begin(), r.end(), out.row(b).begin());
  }
  return out;
}

StateBatch AffineMap::vjp_input(const StateBatch&, const StateBatch& x, const StateBatch&) const {
  return StateBatch(x.batch(), x.dim());
}

LinearContraction make_linear_contraction(std::size_t d, double rho, std::uint64_t seed) {
  check_rho(rho, "make_linear_contraction");
  if (d == 0) throw InvalidArgument("make_linear_contraction: d must be >= 1");
  std::mt19937_64 rng(seed);
  const Matrix q = random_orthogonal(d, rng);
  const Vector diag = uniform_diag(d, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  LinearContraction p;
  p.a = scaled_product(q, diag, q, rho);
  p.b.resize(d);
  for (double& v : p.b) v = normal(rng);
  p.spectral_radius_bound = rho;
  return p;
}

Vector analytic_fixed_point(const LinearContraction& p) {
  const std::size_t d = p.a.rows();
  Matrix m = Matrix::identity(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) -= p.a(i, j);
  return solve_dense(std::move(m), p.b);
}

SimpleDeq make_simple_deq(std::size_t d, std::size_t dx, double rho, std::uint64_t seed) {
  check_rho(rho, "make_simple_deq");
  if (d == 0 || dx == 0) throw InvalidArgument("make_simple_deq: dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  const Matrix q1 = random_orthogonal(d, rng);
  const Matrix q2 = random_orthogonal(d, rng);
  const Vector diag = uniform_diag(d, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  SimpleDeq p;
  p.w = scaled_product(q1, diag, q2, rho);
  p.u = Matrix(d, dx);
  const double su = 1.0 / std::sqrt(static_cast<double>(dx));
  for (double& v : p.u.data()) v = su * normal(rng);
  p.b.resize(d);
  for (double& v : p.b) v = 0.1 * normal(rng);
  return p;
}

SimpleDeqMap::SimpleDeqMap(SimpleDeq p) : p_(std::move(p)) {
  const std::size_t d = p_.w.rows();
  if (d == 0 || p_.w.cols() != d || p_.u.rows() != d || p_.b.size() != d || p_.u.cols() == 0) {
    throw InvalidArgument("SimpleDeqMap: need W d x d, U d x dx, b of length d");
  }
}

StateBatch SimpleDeqMap::eval(const StateBatch& z, const StateBatch& x) const {
  if (z.dim() != state_dim() || x.dim() != input_dim() || z.batch() != x.batch()) {
    throw InvalidArgument("SimpleDeqMap: dimension mismatch");
  }
  StateBatch out(z.batch(), z.dim());
  for (std::size_t b = 0; b < z.batch(); ++b) {
    const Vector wz = matvec(p_.w, z.row(b));
    const Vector ux = matvec(p_.u, x.row(b));
    for (std::size_t i = 0; i < wz.size(); ++i) out(b, i) = std::tanh(wz[i] + ux[i] + p_.b[i]);
  }
  return out;
}

StateBatch SimpleDeqMap::activation_slope(const StateBatch& z, const StateBatch& x) const {
  StateBatch fz = eval(z, x);
  for (double& v : fz.values()) v = 1.0 - v * v;
  return fz;
}

StateBatch SimpleDeqMap::vjp_state(const StateBatch& z, const StateBatch& x,
                                   const StateBatch& v) const {
  if (!v.same_shape(z)) throw InvalidArgument("SimpleDeqMap::vjp_state: shape mismatch");
  const StateBatch slope = activation_slope(z, x);
  StateBatch out(z.batch(), z.dim());
  Vector g(z.dim());
  for (std::size_t b = 0; b < z.batch(); ++b) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = v(b, i) * slope(b, i);
    const Vector r = matvec_transposed(p_.w, g);
    std::copy(r.begin(), r.end(), out.row(b).begin());
  }
  return out;
}

StateBatch SimpleDeqMap::vjp_input(const StateBatch& z, const StateBatch& x,
                                   const StateBatch& v) const {
  if (!v.same_shape(z)) throw InvalidArgument("SimpleDeqMap::vjp_input: shape mismatch");
  const StateBatch slope = activation_slope(z, x);
  StateBatch out(x.batch(), x.dim());
  Vector g(z.dim());
  for (std::size_t b = 0; b < z.batch(); ++b) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = v(b, i) * slope(b, i);
    const Vector r = matvec_transposed(p_.u, g);
    std::copy(r.begin(), r.end(), out.row(b).begin());
  }
  return out;
}

std::vector<double> SimpleDeqMap::vjp_params(const StateBatch& z, const StateBatch& x,
                                             const StateBatch& v) const {
  if (!v.same_shape(z)) throw InvalidArgument("SimpleDeqMap::vjp_params: shape mismatch");
  const StateBatch slope = activation_slope(z, x);
  const std::size_t d = state_dim();
  const std::size_t dx = input_dim();
  std::vector<double> grad(param_count(), 0.0);
  double* gw = grad.data();
  double* gu = gw + d * d;
  double* gb = gu + d * dx;
  for (std::size_t b = 0; b < z.batch(); ++b) {
    for (std::size_t i = 0; i < d; ++i) {
      const double g = v(b, i) * slope(b, i);
      for (std::size_t j = 0; j < d; ++j) gw[i * d + j] += g * z(b, j);
      for (std::size_t j = 0; j < dx; ++j) gu[i * dx + j] += g * x(b, j);
      gb[i] += g;
    }
  }
  return grad;
}

std::size_t SimpleDeqMap::param_count() const {
  const std::size_t d = state_dim();
  return d * d + d * input_dim() + d;
}

SimpleDeqMap simple_deq_map(const SimpleDeq& p) { return SimpleDeqMap(p); }

std::vector<ProbeProblem> scalar_probe_suite() {
  std::vector<ProbeProblem> suite;
  const StateBatch x1(1, 1);

  suite.push_back({"affine", std::make_shared<AffineMap>(Matrix{{0.5}}, Vector{1.0}), x1,
                   StateBatch::row_vector({0.0}), {2.0}});
  suite.push_back({"tanh", std::make_shared<TanhProbe>(), x1, StateBatch::row_vector({1.0}),
                   {0.0}});
  suite.push_back({"saturating", std::make_shared<SaturatingProbe>(), x1,
                   StateBatch::row_vector({0.0}), {1.5}});

  const double th = std::numbers::pi / 3.0;
  const Matrix rot{{0.8 * std::cos(th), -0.8 * std::sin(th)},
                   {0.8 * std::sin(th), 0.8 * std::cos(th)}};
  const Vector off{1.0, -0.5};
  Matrix lhs = Matrix::identity(2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) lhs(i, j) -= rot(i, j);
  Vector zstar = solve_dense(lhs, off);
  suite.push_back({"rotation", std::make_shared<AffineMap>(rot, off), StateBatch(1, 2),
                   StateBatch::row_vector({0.0, 0.0}), std::move(zstar)});
  return suite;
}

std::string ProblemSpec::to_json() const {
  json j = {{"kind", kind}, {"d", d}, {"seed", seed}, {"batch", batch}};
  if (kind == "linear_contraction" || kind == "simple_deq") j["rho"] = rho;
  if (kind == "simple_deq") j["input_dim"] = input_dim == 0 ? d : input_dim;
  if (kind == "deq") {
    j["hidden"] = hidden == 0 ? 2 * d : hidden;
    j["groups"] = groups;
  }
  return j.dump();
}

ProblemSpec ProblemSpec::from_json(std::string_view text, const std::string& prefix) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(prefix + ": " + e.what());
  }
  if (!j.is_object()) throw InvalidArgument(prefix + ": expected an object");

  auto field = [&](const char* name) -> std::string { return prefix + "." + name; };
  auto get_count = [&](const char* name, bool required, std::size_t fallback) -> std::size_t {
    if (!j.contains(name)) {
      if (required) throw InvalidArgument(field(name) + ": missing required field");
      return fallback;
    }
    const json& v = j.at(name);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw InvalidArgument(field(name) + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  };

  ProblemSpec s;
  if (!j.contains("kind")) throw InvalidArgument(field("kind") + ": missing required field");
  if (!j.at("kind").is_string()) throw InvalidArgument(field("kind") + ": expected a string");
  s.kind = j.at("kind").get<std::string>();
  if (s.kind != "linear_contraction" && s.kind != "simple_deq" && s.kind != "deq") {
    throw InvalidArgument(field("kind") + ": unknown problem kind '" + s.kind +
                          "' (expected linear_contraction, simple_deq or deq)");
  }
  s.d = get_count("d", true, 0);
  if (s.d == 0) throw InvalidArgument(field("d") + ": must be >= 1");
  s.seed = get_count("seed", true, 0);
  s.batch = get_count("batch", false, 1);
  if (s.batch == 0) throw InvalidArgument(field("batch") + ": must be >= 1");
  if (s.kind != "deq") {
    if (!j.contains("rho")) throw InvalidArgument(field("rho") + ": missing required field");
    if (!j.at("rho").is_number()) throw InvalidArgument(field("rho") + ": expected a number");
    s.rho = j.at("rho").get<double>();
    if (!(s.rho > 0.0 && s.rho < 1.0)) throw InvalidArgument(field("rho") + ": must lie in (0, 1)");
  }
  if (s.kind == "simple_deq") s.input_dim = get_count("input_dim", false, s.d);
  if (s.kind == "deq") {
    s.hidden = get_count("hidden", false, 2 * s.d);
    s.groups = get_count("groups", false, 2);
    if (s.groups == 0 || s.d % s.groups != 0 || s.hidden % s.groups != 0) {
      throw InvalidArgument(field("groups") + ": must divide both d and hidden");
    }
  }
  return s;
}

BenchProblem build_problem(const ProblemSpec& spec) {
  BenchProblem out;
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t batch = std::max<std::size_t>(spec.batch, 1);

  if (spec.kind == "linear_contraction") {
    const LinearContraction lc = make_linear_contraction(spec.d, spec.rho, spec.seed);
    out.fixed_point = analytic_fixed_point(lc);
    out.map = std::make_shared<AffineMap>(lc.a, lc.b);
    out.x = StateBatch(batch, spec.d);
  } else if (spec.kind == "simple_deq") {
    const std::size_t dx = spec.input_dim == 0 ? spec.d : spec.input_dim;
    out.map = std::make_shared<SimpleDeqMap>(make_simple_deq(spec.d, dx, spec.rho, spec.seed));
    out.x = StateBatch(batch, dx);
    for (double& v : out.x.values()) v = normal(rng);
  } else if (spec.kind == "deq") {
    const std::size_t hidden = spec.hidden == 0 ? 2 * spec.d : spec.hidden;
    out.map = std::make_shared<DeqMap>(init_params(spec.d, hidden, spec.groups, spec.seed));
    out.x = StateBatch(batch, spec.d);
    for (double& v : out.x.values()) v = normal(rng);
  } else {
    throw InvalidArgument("problem.kind: unknown problem kind '" + spec.kind + "'");
  }
  out.z0 = StateBatch(batch, spec.d);
  return out;
}

}  // namespace fixpt
