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

#ifndef FIXPT_DEQ_HPP
#define FIXPT_DEQ_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "fixpt/dense.hpp"
#include "fixpt/state.hpp"

namespace fixpt {

struct GroupNormSpec {
  std::size_t channels = 0;
  std::size_t groups = 1;
  Vector gamma;
  Vector beta_shift;
  double epsilon = 1e-5;

  /// gamma = 1, beta_shift = 0, epsilon = 1e-5.
  static GroupNormSpec standard(std::size_t channels, std::size_t groups);
  void validate() const;
};

/// Per group: gamma * (v - mean) / sqrt(var + eps) + beta_shift, population variance.
Vector group_norm(std::span<const double> v, const GroupNormSpec& spec);

Vector relu(std::span<const double> v);

/// Weights of f(z, x) = norm3(relu(z + norm2(x + W2 norm1(relu(W1 z))))).
struct DeqParams {
  Matrix w1;  ///< hidden x d
  Matrix w2;  ///< d x hidden
  GroupNormSpec norm1;  ///< over hidden channels
  GroupNormSpec norm2;  ///< over d channels
  GroupNormSpec norm3;  ///< over d channels

  std::size_t dim() const noexcept { return w1.cols(); }
  std::size_t hidden() const noexcept { return w1.rows(); }
  void validate() const;

  /// Flat parameter order: W1 row-major, W2 row-major, then gamma and
  /// beta_shift of norm1, norm2, norm3 in turn.
  std::size_t param_count() const;
  Vector flatten() const;
  /// Copy of *this with every parameter replaced from `flat`.
  DeqParams with_flat(std::span<const double> flat) const;
};

/// Gaussian weights scaled by 1/sqrt(fan-in), standard group norms.
DeqParams init_params(std::size_t d, std::size_t hidden, std::size_t groups, std::uint64_t seed);

StateBatch deq_forward(const DeqParams& params, const StateBatch& z, const StateBatch& x);

/// deq_forward as a differentiable fixed-point map. Backward products are
/// analytic; the ReLU subgradient at 0 is 0.
class DeqMap final : public DifferentiableMap {
 public:
  explicit DeqMap(DeqParams params);

  const DeqParams& params() const noexcept { return params_; }

  StateBatch eval(const StateBatch& z, const StateBatch& x) const override;
  std::size_t state_dim() const override { return params_.dim(); }

  StateBatch vjp_state(const StateBatch& z, const StateBatch& x,
                       const StateBatch& v) const override;
  StateBatch vjp_input(const StateBatch& z, const StateBatch& x,
                       const StateBatch& v) const override;
  std::vector<double> vjp_params(const StateBatch& z, const StateBatch& x,
                                 const StateBatch& v) const override;
  std::size_t param_count() const override { return params_.param_count(); }

 private:
  DeqParams params_;
};

/// Flat JSON document: shape metadata plus row-major value arrays.
std::string deq_params_to_json(const DeqParams& params);
DeqParams deq_params_from_json(std::string_view text);
void save_deq_params(const DeqParams& params, const std::filesystem::path& path);
DeqParams load_deq_params(const std::filesystem::path& path);

}  // namespace fixpt

#endif  // FIXPT_DEQ_HPP
