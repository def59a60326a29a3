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

#ifndef FIXPT_STATE_HPP
#define FIXPT_STATE_HPP

#include <cstddef>
#include <span>
#include <vector>

namespace fixpt {

/// A batch of flattened state (or input) vectors, one per row.
class StateBatch {
 public:
  StateBatch() = default;
  StateBatch(std::size_t batch, std::size_t dim, double fill = 0.0);
  StateBatch(std::size_t batch, std::size_t dim, std::vector<double> values);

  /// Single-row batch.
  static StateBatch row_vector(std::vector<double> values);

  std::size_t batch() const noexcept { return batch_; }
  std::size_t dim() const noexcept { return dim_; }

  std::span<double> row(std::size_t b) { return {values_.data() + b * dim_, dim_}; }
  std::span<const double> row(std::size_t b) const {
    return {values_.data() + b * dim_, dim_};
  }

  double& operator()(std::size_t b, std::size_t j) { return values_[b * dim_ + j]; }
  double operator()(std::size_t b, std::size_t j) const { return values_[b * dim_ + j]; }

  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  bool same_shape(const StateBatch& o) const noexcept {
    return batch_ == o.batch_ && dim_ == o.dim_;
  }
  bool all_finite() const;

  friend bool operator==(const StateBatch&, const StateBatch&) = default;

 private:
  std::size_t batch_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

/// f(z, x) whose fixed point z* = f(z*, x) the solvers seek.
///
/// Implementations must be deterministic and safe to call concurrently
/// from several solver runs.
class FixedPointMap {
 public:
  virtual ~FixedPointMap() = default;

  virtual StateBatch eval(const StateBatch& z, const StateBatch& x) const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t input_dim() const { return state_dim(); }
};

/// A fixed-point map that can also pull cotangents back through itself.
/// All three products are evaluated at (z, x) and return v^T times the
/// corresponding partial Jacobian.
class DifferentiableMap : public FixedPointMap {
 public:
  /// v^T df/dz, same shape as z.
  virtual StateBatch vjp_state(const StateBatch& z, const StateBatch& x,
                               const StateBatch& v) const = 0;
  /// v^T df/dx, same shape as x.
  virtual StateBatch vjp_input(const StateBatch& z, const StateBatch& x,
                               const StateBatch& v) const = 0;
  /// v^T df/dtheta summed over batch rows, in the map's declared parameter order.
  virtual std::vector<double> vjp_params(const StateBatch& z, const StateBatch& x,
                                         const StateBatch& v) const = 0;
  virtual std::size_t param_count() const = 0;
};

}  // namespace fixpt

#endif  // FIXPT_STATE_HPP
