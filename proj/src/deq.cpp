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

#include "fixpt/deq.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "fixpt/errors.hpp"

namespace fixpt {

namespace {

// Normalized values and inverse std devs kept from a group-norm forward pass.
struct NormCache {
  Vector xhat;
  Vector inv_std;  // one per group
};

Vector group_norm_cached(std::span<const double> v, const GroupNormSpec& spec, NormCache* cache) {
  if (v.size() != spec.channels) {
    throw InvalidArgument("group_norm: expected " + std::to_string(spec.channels) +
                          " channels, got " + std::to_string(v.size()));
  }
  const std::size_t gs = spec.channels / spec.groups;
  Vector out(v.size());
  if (cache) {
    cache->xhat.resize(v.size());
    cache->inv_std.resize(spec.groups);
  }
  for (std::size_t g = 0; g < spec.groups; ++g) {
    const std::size_t lo = g * gs;
    double mean = 0.0;
    for (std::size_t c = lo; c < lo + gs; ++c) mean += v[c];
    mean /= static_cast<double>(gs);
    double var = 0.0;
    for (std::size_t c = lo; c < lo + gs; ++c) var += (v[c] - mean) * (v[c] - mean);
    var /= static_cast<double>(gs);
    const double inv = 1.0 / std::sqrt(var + spec.epsilon);
    for (std::size_t c = lo; c < lo + gs; ++c) {
      const double xh = (v[c] - mean) * inv;
      out[c] = spec.gamma[c] * xh + spec.beta_shift[c];
      if (cache) cache->xhat[c] = xh;
    }
    if (cache) cache->inv_std[g] = inv;
  }
  return out;
}

// Pulls dL/dout back to dL/dv; accumulates gamma/beta gradients when given.
Vector group_norm_backward(std::span<const double> grad_out, const GroupNormSpec& spec,
                           const NormCache& cache, double* grad_gamma, double* grad_beta) {
  const std::size_t gs = spec.channels / spec.groups;
  Vector grad_in(spec.channels);
  for (std::size_t g = 0; g < spec.groups; ++g) {
    const std::size_t lo = g * gs;
    double mean_dxh = 0.0;
    double mean_dxh_xh = 0.0;
    for (std::size_t c = lo; c < lo + gs; ++c) {
      const double dxh = grad_out[c] * spec.gamma[c];
      mean_dxh += dxh;
      mean_dxh_xh += dxh * cache.xhat[c];
      if (grad_gamma) grad_gamma[c] += grad_out[c] * cache.xhat[c];
      if (grad_beta) grad_beta[c] += grad_out[c];
    }
    mean_dxh /= static_cast<double>(gs);
    mean_dxh_xh /= static_cast<double>(gs);
    for (std::size_t c = lo; c < lo + gs; ++c) {
      const double dxh = grad_out[c] * spec.gamma[c];
      grad_in[c] = cache.inv_std[g] * (dxh - mean_dxh - cache.xhat[c] * mean_dxh_xh);
    }
  }
  return grad_in;
}

struct RowCache {
  Vector a1;  // W1 z
  Vector n1;  // norm1(relu(a1))
  Vector s3;  // z + norm2(x + W2 n1)
  NormCache c1, c2, c3;
};

Vector forward_row(const DeqParams& p, std::span<const double> z, std::span<const double> x,
                   RowCache* cache) {
  Vector a1 = matvec(p.w1, z);
  Vector n1 = group_norm_cached(relu(a1), p.norm1, cache ? &cache->c1 : nullptr);
  Vector s2 = matvec(p.w2, n1);
  for (std::size_t j = 0; j < s2.size(); ++j) s2[j] += x[j];
  Vector s3 = group_norm_cached(s2, p.norm2, cache ? &cache->c2 : nullptr);
  for (std::size_t j = 0; j < s3.size(); ++j) s3[j] += z[j];
  Vector out = group_norm_cached(relu(s3), p.norm3, cache ? &cache->c3 : nullptr);
  if (cache) {
    cache->a1 = std::move(a1);
    cache->n1 = std::move(n1);
    cache->s3 = std::move(s3);
  }
  return out;
}

// Which cotangents a backward pass should produce.
struct BackwardSinks {
  std::span<double> grad_z;      // empty = skip
  std::span<double> grad_x;      // empty = skip
  std::span<double> grad_theta;  // empty = skip; accumulated
};

void backward_row(const DeqParams& p, std::span<const double> z, std::span<const double> x,
                  std::span<const double> v, const BackwardSinks& sinks) {
  RowCache c;
  forward_row(p, z, x, &c);
  const std::size_t d = p.dim();
  const std::size_t h = p.hidden();
  const bool want_theta = !sinks.grad_theta.empty();

  // Offsets into the flat parameter vector.
  const std::size_t off_w1 = 0;
  const std::size_t off_w2 = off_w1 + h * d;
  const std::size_t off_n1 = off_w2 + d * h;
  const std::size_t off_n2 = off_n1 + 2 * h;
  const std::size_t off_n3 = off_n2 + 2 * d;
  double* th = want_theta ? sinks.grad_theta.data() : nullptr;

  Vector g_r3 = group_norm_backward(v, p.norm3, c.c3, th ? th + off_n3 : nullptr,
                                    th ? th + off_n3 + d : nullptr);
  Vector g_s3(d);
  for (std::size_t j = 0; j < d; ++j) g_s3[j] = c.s3[j] > 0.0 ? g_r3[j] : 0.0;

  Vector g_s2 = group_norm_backward(g_s3, p.norm2, c.c2, th ? th + off_n2 : nullptr,
                                    th ? th + off_n2 + d : nullptr);
  if (!sinks.grad_x.empty()) {
    for (std::size_t j = 0; j < d; ++j) sinks.grad_x[j] = g_s2[j];
  }
  if (sinks.grad_z.empty() && !want_theta) return;

  if (want_theta) {
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < h; ++k) th[off_w2 + i * h + k] += g_s2[i] * c.n1[k];
  }
  Vector g_n1 = matvec_transposed(p.w2, g_s2);
  Vector g_r1 = group_norm_backward(g_n1, p.norm1, c.c1, th ? th + off_n1 : nullptr,
                                    th ? th + off_n1 + h : nullptr);
  Vector g_a1(h);
  for (std::size_t k = 0; k < h; ++k) g_a1[k] = c.a1[k] > 0.0 ? g_r1[k] : 0.0;

  if (want_theta) {
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t j = 0; j < d; ++j) th[off_w1 + k * d + j] += g_a1[k] * z[j];
  }
  if (!sinks.grad_z.empty()) {
    Vector g_z = matvec_transposed(p.w1, g_a1);
    for (std::size_t j = 0; j < d; ++j) sinks.grad_z[j] = g_z[j] + g_s3[j];
  }
}

void check_batch(const DeqParams& p, const StateBatch& z, const StateBatch& x) {
  if (z.dim() != p.dim() || x.dim() != p.dim() || z.batch() != x.batch()) {
    throw InvalidArgument("deq_forward: z and x must be batches of dim " +
                          std::to_string(p.dim()));
  }
}

using nlohmann::json;

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", m.data()}};
}

Matrix matrix_from(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("values").get<std::vector<double>>());
}

json norm_json(const GroupNormSpec& s) {
  return {{"channels", s.channels}, {"groups", s.groups}, {"epsilon", s.epsilon},
          {"gamma", s.gamma},       {"beta_shift", s.beta_shift}};
}

GroupNormSpec norm_from(const json& j) {
  GroupNormSpec s;
  s.channels = j.at("channels").get<std::size_t>();
  s.groups = j.at("groups").get<std::size_t>();
  s.epsilon = j.at("epsilon").get<double>();
  s.gamma = j.at("gamma").get<Vector>();
  s.beta_shift = j.at("beta_shift").get<Vector>();
  return s;
}

}  // namespace

GroupNormSpec GroupNormSpec::standard(std::size_t channels, std::size_t groups) {
  GroupNormSpec s;
  s.channels = channels;
  s.groups = groups;
  s.gamma.assign(channels, 1.0);
  s.beta_shift.assign(channels, 0.0);
  s.validate();
  return s;
}

void GroupNormSpec::validate() const {
  if (groups == 0 || channels == 0 || channels % groups != 0) {
    throw InvalidArgument("GroupNormSpec: groups (" + std::to_string(groups) +
                          ") must divide channels (" + std::to_string(channels) + ")");
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("GroupNormSpec: epsilon must be > 0");
  if (gamma.size() != channels || beta_shift.size() != channels) {
    throw InvalidArgument("GroupNormSpec: gamma/beta_shift must have one entry per channel");
  }
}

Vector group_norm(std::span<const double> v, const GroupNormSpec& spec) {
  spec.validate();
  return group_norm_cached(v, spec, nullptr);
}

Vector relu(std::span<const double> v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

void DeqParams::validate() const {
  const std::size_t d = dim();
  const std::size_t h = hidden();
  if (d == 0 || h == 0) throw InvalidArgument("DeqParams: empty weights");
  if (w2.rows() != d || w2.cols() != h) {
    throw InvalidArgument("DeqParams: W2 must be " + std::to_string(d) + "x" + std::to_string(h));
  }
  norm1.validate();
  norm2.validate();
  norm3.validate();
  if (norm1.channels != h || norm2.channels != d || norm3.channels != d) {
    throw InvalidArgument("DeqParams: norm channel counts do not match the weights");
  }
  if (!w1.all_finite() || !w2.all_finite()) throw InvalidArgument("DeqParams: non-finite weight");
}

std::size_t DeqParams::param_count() const {
  return 2 * hidden() * dim() + 2 * hidden() + 4 * dim();
}

Vector DeqParams::flatten() const {
  Vector out;
  out.reserve(param_count());
  out.insert(out.end(), w1.data().begin(), w1.data().end());
  out.insert(out.end(), w2.data().begin(), w2.data().end());
  for (const GroupNormSpec* s : {&norm1, &norm2, &norm3}) {
    out.insert(out.end(), s->gamma.begin(), s->gamma.end());
    out.insert(out.end(), s->beta_shift.begin(), s->beta_shift.end());
  }
  return out;
}

DeqParams DeqParams::with_flat(std::span<const double> flat) const {
  if (flat.size() != param_count()) {
    throw InvalidArgument("DeqParams::with_flat: expected " + std::to_string(param_count()) +
                          " values, got " + std::to_string(flat.size()));
  }
  DeqParams p = *this;
  auto it = flat.begin();
  auto take = [&it](std::vector<double>& dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(p.w1.data());
  take(p.w2.data());
  for (GroupNormSpec* s : {&p.norm1, &p.norm2, &p.norm3}) {
    take(s->gamma);
    take(s->beta_shift);
  }
  return p;
}

DeqParams init_params(std::size_t d, std::size_t hidden, std::size_t groups, std::uint64_t seed) {
  if (d == 0 || hidden == 0 || groups == 0 || d % groups != 0 || hidden % groups != 0) {
    throw InvalidArgument("init_params: groups must divide both d and hidden");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DeqParams p;
  p.w1 = Matrix(hidden, d);
  p.w2 = Matrix(d, hidden);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double& w : p.w1.data()) w = s1 * normal(rng);
  for (double& w : p.w2.data()) w = s2 * normal(rng);
  p.norm1 = GroupNormSpec::standard(hidden, groups);
  p.norm2 = GroupNormSpec::standard(d, groups);
  p.norm3 = GroupNormSpec::standard(d, groups);
  return p;
}

StateBatch deq_forward(const DeqParams& params, const StateBatch& z, const StateBatch& x) {
  check_batch(params, z, x);
  StateBatch out(z.batch(), z.dim());
  for (std::size_t b = 0; b < z.batch(); ++b) {
    const Vector r = forward_row(params, z.row(b), x.row(b), nullptr);
    std::copy(r.begin(), r.end(), out.row(b).begin());
  }
  return out;
}

DeqMap::DeqMap(DeqParams params) : params_(std::move(params)) { params_.validate(); }

StateBatch DeqMap::eval(const StateBatch& z, const StateBatch& x) const {
  return deq_forward(params_, z, x);
}

StateBatch DeqMap::vjp_state(const StateBatch& z, const StateBatch& x, const StateBatch& v) const {
  check_batch(params_, z, x);
  if (!v.same_shape(z)) throw InvalidArgument("vjp_state: cotangent shape mismatch");
  StateBatch out(z.batch(), z.dim());
  for (std::size_t b = 0; b < z.batch(); ++b) {
    backward_row(params_, z.row(b), x.row(b), v.row(b), {out.row(b), {}, {}});
  }
  return out;
}

StateBatch DeqMap::vjp_input(const StateBatch& z, const StateBatch& x, const StateBatch& v) const {
  check_batch(params_, z, x);
  if (!v.same_shape(z)) throw InvalidArgument("vjp_input: cotangent shape mismatch");
  StateBatch out(x.batch(), x.dim());
  for (std::size_t b = 0; b < z.batch(); ++b) {
    backward_row(params_, z.row(b), x.row(b), v.row(b), {{}, out.row(b), {}});
  }
  return out;
}

std::vector<double> DeqMap::vjp_params(const StateBatch& z, const StateBatch& x,
                                       const StateBatch& v) const {
  check_batch(params_, z, x);
  if (!v.same_shape(z)) throw InvalidArgument("vjp_params: cotangent shape mismatch");
  std::vector<double> grad(param_count(), 0.0);
  for (std::size_t b = 0; b < z.batch(); ++b) {
    backward_row(params_, z.row(b), x.row(b), v.row(b), {{}, {}, grad});
  }
  return grad;
}

std::string deq_params_to_json(const DeqParams& p) {
  json j = {{"format", "fixpt.deq_params"},
            {"version", 1},
            {"dim", p.dim()},
            {"hidden", p.hidden()},
            {"w1", matrix_json(p.w1)},
            {"w2", matrix_json(p.w2)},
            {"norm1", norm_json(p.norm1)},
            {"norm2", norm_json(p.norm2)},
            {"norm3", norm_json(p.norm3)}};
  return j.dump(1);
}

DeqParams deq_params_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "fixpt.deq_params") {
      throw ParseError("deq params: missing or wrong \"format\" field");
    }
    DeqParams p;
    p.w1 = matrix_from(j.at("w1"));
    p.w2 = matrix_from(j.at("w2"));
    p.norm1 = norm_from(j.at("norm1"));
    p.norm2 = norm_from(j.at("norm2"));
    p.norm3 = norm_from(j.at("norm3"));
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("deq params: ") + e.what());
  }
}

void save_deq_params(const DeqParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << deq_params_to_json(params) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

DeqParams load_deq_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deq_params_from_json(ss.str());
}

}  // namespace fixpt
