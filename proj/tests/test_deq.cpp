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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fixpt/anderson.hpp"
#include "fixpt/deq.hpp"
#include "fixpt/errors.hpp"
#include "fixpt/implicit_grad.hpp"
#include "oracles.hpp"

using namespace fixpt;

namespace {

StateBatch random_batch(std::size_t batch, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  StateBatch s(batch, dim);
  for (double& v : s.values()) v = n(rng);
  return s;
}

Eigen::VectorXd group_norm_ref(const Eigen::VectorXd& v, const GroupNormSpec& spec) {
  const Eigen::Index size = static_cast<Eigen::Index>(spec.channels / spec.groups);
  Eigen::VectorXd out(v.size());
  for (std::size_t g = 0; g < spec.groups; ++g) {
    const Eigen::Index off = static_cast<Eigen::Index>(g) * size;
    const Eigen::VectorXd seg = v.segment(off, size);
    const double mean = seg.mean();
    const double var = (seg.array() - mean).square().mean();
    for (Eigen::Index i = 0; i < size; ++i) {
      out(off + i) = spec.gamma[off + i] * (seg(i) - mean) / std::sqrt(var + spec.epsilon) +
                     spec.beta_shift[off + i];
    }
  }
  return out;
}

// Straight-line version of the layer for one row.
Eigen::VectorXd layer_ref(const DeqParams& p, const Eigen::VectorXd& z, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd w1 = oracle::to_eigen(p.w1);
  const Eigen::MatrixXd w2 = oracle::to_eigen(p.w2);
  const Eigen::VectorXd h = group_norm_ref((w1 * z).cwiseMax(0.0), p.norm1);
  const Eigen::VectorXd s = group_norm_ref(x + w2 * h, p.norm2);
  return group_norm_ref((z + s).cwiseMax(0.0), p.norm3);
}

DeqParams damped(std::size_t d, std::size_t hidden, std::size_t groups, std::uint64_t seed,
                 double gain) {
  DeqParams p = init_params(d, hidden, groups, seed);
  for (double& w : p.w1.data()) w *= gain;
  for (double& w : p.w2.data()) w *= gain;
  return p;
}

Vector perturbed_norms(std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Vector v(count);
  for (double& e : v) e = u(rng);
  return v;
}

}  // namespace

TEST_CASE("group_norm examples") {
  const GroupNormSpec one = GroupNormSpec::standard(4, 1);
  const Vector y = group_norm(Vector{1, 2, 3, 4}, one);
  const double s = std::sqrt(1.25 + 1e-5);
  CHECK(y[0] == doctest::Approx(-1.5 / s).epsilon(1e-14));
  CHECK(y[3] == doctest::Approx(1.5 / s).epsilon(1e-14));

  const GroupNormSpec two = GroupNormSpec::standard(4, 2);
  const Vector y2 = group_norm(Vector{1, 3, 10, 10}, two);
  CHECK(y2[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));
  CHECK(y2[1] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));
  CHECK(y2[2] == 0.0);
  CHECK(y2[3] == 0.0);

  GroupNormSpec shifted = GroupNormSpec::standard(2, 1);
  shifted.gamma = {2.0, 3.0};
  shifted.beta_shift = {0.5, -0.5};
  const Vector y3 = group_norm(Vector{7, 7}, shifted);
  CHECK(y3 == Vector{0.5, -0.5});

  GroupNormSpec flat = GroupNormSpec::standard(3, 1);
  flat.gamma = {0.0, 0.0, 0.0};
  flat.beta_shift = {0.25, -1.0, 4.0};
  CHECK(group_norm(Vector{1.0, -7.0, 30.0}, flat) == flat.beta_shift);
  const Vector y4 = group_norm(Vector{1.0, 3.0}, GroupNormSpec::standard(2, 1));
  CHECK(y4[0] == doctest::Approx(-0.999995).epsilon(1e-6));
  CHECK(y4[1] == doctest::Approx(0.999995).epsilon(1e-6));

  CHECK_THROWS_AS(group_norm(Vector{1, 2, 3}, GroupNormSpec::standard(4, 2)), InvalidArgument);
  CHECK_THROWS_AS(GroupNormSpec::standard(5, 2).validate(), InvalidArgument);
  CHECK_THROWS_AS(GroupNormSpec::standard(4, 0).validate(), InvalidArgument);
}

TEST_CASE("group_norm output has zero mean and unit variance per group") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(3.0, 10.0);
  const GroupNormSpec spec = GroupNormSpec::standard(12, 3);
  for (int t = 0; t < 50; ++t) {
    Vector v(12);
    for (double& e : v) e = n(rng);
    const Vector y = group_norm(v, spec);
    for (std::size_t g = 0; g < 3; ++g) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < 4; ++i) mean += y[4 * g + i] / 4.0;
      for (std::size_t i = 0; i < 4; ++i) sq += (y[4 * g + i] - mean) * (y[4 * g + i] - mean) / 4.0;
      CHECK(std::abs(mean) <= 1e-12);
      CHECK(sq == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("relu examples") {
  CHECK(relu(Vector{-1.0, 0.0, 2.5, -0.0}) == Vector{0.0, 0.0, 2.5, 0.0});
  CHECK(relu(Vector{}).empty());
  CHECK(relu(Vector{-3.0, -1e-300}) == Vector{0.0, 0.0});
  CHECK(relu(Vector{0.5, 7.0}) == Vector{0.5, 7.0});
}

TEST_CASE("init_params shapes and determinism") {
  const DeqParams p = init_params(8, 16, 2, 7);
  CHECK(p.dim() == 8);
  CHECK(p.hidden() == 16);
  CHECK(p.w1.rows() == 16);
  CHECK(p.w2.rows() == 8);
  CHECK(p.norm1.channels == 16);
  CHECK(p.norm2.groups == 2);
  CHECK(p.param_count() == 16 * 8 * 2 + 2 * 16 + 4 * 8);
  CHECK(p.flatten() == init_params(8, 16, 2, 7).flatten());
  CHECK(p.flatten() != init_params(8, 16, 2, 8).flatten());
  CHECK_THROWS_AS(init_params(8, 16, 3, 0), InvalidArgument);
  CHECK_THROWS_AS(init_params(0, 16, 1, 0), InvalidArgument);
}

TEST_CASE("flatten and with_flat round trip") {
  std::mt19937_64 rng(2);
  const DeqParams p = init_params(6, 12, 3, 1);
  Vector flat = p.flatten();
  CHECK(flat.size() == p.param_count());
  CHECK(flat[0] == p.w1(0, 0));
  CHECK(flat[1] == p.w1(0, 1));
  CHECK(flat[12 * 6] == p.w2(0, 0));
  std::normal_distribution<double> n;
  for (double& v : flat) v = n(rng);
  const DeqParams q = p.with_flat(flat);
  CHECK(q.flatten() == flat);
  CHECK(q.norm1.gamma[0] == flat[2 * 72]);
  CHECK(q.norm3.beta_shift.back() == flat.back());
  CHECK_THROWS_AS(p.with_flat(Vector(3)), InvalidArgument);
}

TEST_CASE("params JSON and file round trip") {
  std::mt19937_64 rng(9);
  DeqParams p = init_params(4, 8, 2, 11);
  p.norm2.gamma = perturbed_norms(4, rng);
  const DeqParams q = deq_params_from_json(deq_params_to_json(p));
  CHECK(q.flatten() == p.flatten());
  CHECK(q.norm1.groups == 2);
  CHECK(q.norm3.epsilon == p.norm3.epsilon);

  const auto path = std::filesystem::temp_directory_path() / "fixpt_test_deq_params.json";
  save_deq_params(p, path);
  CHECK(load_deq_params(path).flatten() == p.flatten());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_deq_params(path), IoError);
  CHECK_THROWS_AS(deq_params_from_json("{"), ParseError);
  CHECK_THROWS_AS(deq_params_from_json("{\"d\": 4}"), Error);
}

TEST_CASE("deq_forward matches a straight-line implementation") {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DeqParams p = init_params(8, 16, 2, seed);
    p.norm1.gamma = perturbed_norms(16, rng);
    p.norm2.beta_shift = perturbed_norms(8, rng);
    p.norm3.gamma = perturbed_norms(8, rng);
    const StateBatch z = random_batch(3, 8, rng);
    const StateBatch x = random_batch(3, 8, rng);
    const StateBatch f = deq_forward(p, z, x);
    for (std::size_t b = 0; b < 3; ++b) {
      const Eigen::VectorXd ref = layer_ref(p, Eigen::Map<const Eigen::VectorXd>(z.row(b).data(), 8),
                                            Eigen::Map<const Eigen::VectorXd>(x.row(b).data(), 8));
      for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(f(b, j) - ref(j)) <= 1e-12);
    }
  }
}

TEST_CASE("deq_forward with zero state and input is zero") {
  const DeqParams p = init_params(6, 12, 2, 4);
  const StateBatch f = deq_forward(p, StateBatch(2, 6), StateBatch(2, 6));
  for (double v : f.values()) CHECK(v == 0.0);
}

TEST_CASE("deq_forward with zero weights and group-constant input is zero") {
  DeqParams p = init_params(8, 16, 2, 9);
  p.w1 = Matrix(16, 8);
  p.w2 = Matrix(8, 16);
  StateBatch x(1, 8);
  for (std::size_t j = 0; j < 8; ++j) x(0, j) = j < 4 ? 1.5 : -2.0;
  const StateBatch f = deq_forward(p, StateBatch(1, 8), x);
  for (double v : f.values()) CHECK(v == 0.0);
}

TEST_CASE("deq_forward commutes with batch permutation") {
  std::mt19937_64 rng(3);
  const DeqParams p = init_params(8, 16, 2, 0);
  const StateBatch z = random_batch(4, 8, rng);
  const StateBatch x = random_batch(4, 8, rng);
  const std::size_t perm[] = {2, 0, 3, 1};
  StateBatch zp(4, 8), xp(4, 8);
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t j = 0; j < 8; ++j) {
      zp(b, j) = z(perm[b], j);
      xp(b, j) = x(perm[b], j);
    }
  }
  const StateBatch f = deq_forward(p, z, x);
  const StateBatch fp = deq_forward(p, zp, xp);
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t j = 0; j < 8; ++j) CHECK(fp(b, j) == f(perm[b], j));
  }
}

TEST_CASE("deq_forward output is bounded by the group size") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> wide(0.0, 100.0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const DeqParams p = init_params(8, 16, 2, seed);
    StateBatch z(1, 8), x(1, 8);
    for (double& v : z.values()) v = wide(rng);
    for (double& v : x.values()) v = wide(rng);
    const StateBatch f = deq_forward(p, z, x);
    CHECK(f.all_finite());
    for (double v : f.values()) CHECK(std::abs(v) <= 2.0 + 1e-12);
  }
}

TEST_CASE("deq_forward shape errors") {
  const DeqParams p = init_params(4, 8, 2, 0);
  CHECK_THROWS_AS(deq_forward(p, StateBatch(1, 3), StateBatch(1, 4)), InvalidArgument);
  CHECK_THROWS_AS(deq_forward(p, StateBatch(2, 4), StateBatch(1, 4)), InvalidArgument);
}

TEST_CASE("DeqMap VJPs match finite differences") {
  std::mt19937_64 rng(13);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DeqParams p = init_params(6, 12, 2, seed);
    p.norm2.gamma = perturbed_norms(6, rng);
    const DeqMap f(p);
    const StateBatch z = random_batch(1, 6, rng);
    const StateBatch x = random_batch(1, 6, rng);
    const StateBatch v = random_batch(1, 6, rng);

    const Matrix jz = jacobian_fd(f, z, x);
    const Vector ref_z = matvec_transposed(jz, Vector(v.values()));
    const StateBatch got_z = f.vjp_state(z, x, v);
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(got_z(0, j) - ref_z[j]) <= 1e-4);

    const double h = 1e-6;
    const StateBatch got_x = f.vjp_input(z, x, v);
    for (std::size_t j = 0; j < 6; ++j) {
      StateBatch xp = x, xm = x;
      xp(0, j) += h;
      xm(0, j) -= h;
      const StateBatch fp = f.eval(z, xp), fm = f.eval(z, xm);
      double fd = 0.0;
      for (std::size_t i = 0; i < 6; ++i) fd += v(0, i) * (fp(0, i) - fm(0, i)) / (2 * h);
      CHECK(std::abs(got_x(0, j) - fd) <= 1e-4);
    }

    const Vector got_p = f.vjp_params(z, x, v);
    REQUIRE(got_p.size() == f.param_count());
    const Vector flat = p.flatten();
    for (std::size_t k = 0; k < flat.size(); k += 7) {
      Vector fp = flat, fm = flat;
      fp[k] += h;
      fm[k] -= h;
      const StateBatch ep = deq_forward(p.with_flat(fp), z, x);
      const StateBatch em = deq_forward(p.with_flat(fm), z, x);
      double fd = 0.0;
      for (std::size_t i = 0; i < 6; ++i) fd += v(0, i) * (ep(0, i) - em(0, i)) / (2 * h);
      CHECK(std::abs(got_p[k] - fd) <= 1e-4);
    }
  }
}

TEST_CASE("vjp with unit cotangents reproduces the rows of the Jacobian") {
  std::mt19937_64 rng(40);
  const DeqMap f(init_params(16, 32, 4, 6));
  const StateBatch z = random_batch(1, 16, rng);
  const StateBatch x = random_batch(1, 16, rng);
  const Matrix j = jacobian_fd(f, z, x);
  for (std::size_t i = 0; i < 16; ++i) {
    StateBatch e(1, 16);
    e(0, i) = 1.0;
    const StateBatch row = f.vjp_state(z, x, e);
    for (std::size_t k = 0; k < 16; ++k) CHECK(std::abs(row(0, k) - j(i, k)) <= 1e-4);
  }
}

TEST_CASE("central and one-sided Jacobians of the layer agree") {
  std::mt19937_64 rng(41);
  const DeqMap f(init_params(8, 16, 2, 0));
  const StateBatch z = random_batch(1, 8, rng);
  const StateBatch x = random_batch(1, 8, rng);
  const Matrix central = jacobian_fd(f, z, x);
  const StateBatch f0 = f.eval(z, x);
  const double h = 1e-7;
  for (std::size_t k = 0; k < 8; ++k) {
    StateBatch zp = z;
    zp(0, k) += h;
    const StateBatch fp = f.eval(zp, x);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs((fp(0, i) - f0(0, i)) / h - central(i, k)) <= 1e-4);
  }
}

TEST_CASE("DeqMap VJPs are linear in the cotangent and sum over the batch") {
  std::mt19937_64 rng(31);
  const DeqMap f(init_params(6, 12, 3, 2));
  const StateBatch z = random_batch(2, 6, rng);
  const StateBatch x = random_batch(2, 6, rng);
  const StateBatch v1 = random_batch(2, 6, rng);
  const StateBatch v2 = random_batch(2, 6, rng);
  StateBatch comb = v1;
  for (std::size_t i = 0; i < comb.values().size(); ++i) {
    comb.values()[i] = 2.0 * v1.values()[i] - 3.0 * v2.values()[i];
  }
  const StateBatch a = f.vjp_state(z, x, v1), b = f.vjp_state(z, x, v2), c = f.vjp_state(z, x, comb);
  for (std::size_t i = 0; i < c.values().size(); ++i) {
    CHECK(std::abs(c.values()[i] - (2.0 * a.values()[i] - 3.0 * b.values()[i])) <= 1e-12);
  }
  const Vector pa = f.vjp_params(z, x, v1);
  StateBatch z0 = StateBatch::row_vector({z.row(0).begin(), z.row(0).end()});
  StateBatch z1 = StateBatch::row_vector({z.row(1).begin(), z.row(1).end()});
  StateBatch x0 = StateBatch::row_vector({x.row(0).begin(), x.row(0).end()});
  StateBatch x1 = StateBatch::row_vector({x.row(1).begin(), x.row(1).end()});
  StateBatch w0 = StateBatch::row_vector({v1.row(0).begin(), v1.row(0).end()});
  StateBatch w1 = StateBatch::row_vector({v1.row(1).begin(), v1.row(1).end()});
  const Vector p0 = f.vjp_params(z0, x0, w0), p1 = f.vjp_params(z1, x1, w1);
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(std::abs(pa[k] - (p0[k] + p1[k])) <= 1e-12);
}

TEST_CASE("Anderson and forward iteration reach the same equilibrium") {
  std::mt19937_64 rng(1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    const DeqMap f(damped(16, 32, 2, seed, 0.25));
    const StateBatch x = random_batch(4, 16, rng);
    AndersonConfig cfg;
    cfg.tol = 1e-7;
    const SolverTrace a = anderson_iterate(f, x, StateBatch(4, 16), cfg);
    const SolverTrace fw = forward_iterate(f, x, StateBatch(4, 16), cfg.tol, cfg.max_iter, cfg.lambda);
    REQUIRE(a.converged);
    REQUIRE(fw.converged);
    for (std::size_t i = 0; i < a.final_state.values().size(); ++i) {
      CHECK(std::abs(a.final_state.values()[i] - fw.final_state.values()[i]) <= 1e-4);
    }
  }
}
