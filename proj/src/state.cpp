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

#include "fixpt/state.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "fixpt/errors.hpp"

namespace fixpt {

StateBatch::StateBatch(std::size_t batch, std::size_t dim, double fill)
    : batch_(batch), dim_(dim), values_(batch * dim, fill) {}

StateBatch::StateBatch(std::size_t batch, std::size_t dim, std::vector<double> values)
    : batch_(batch), dim_(dim), values_(std::move(values)) {
  if (values_.size() != batch_ * dim_) {
    throw InvalidArgument("StateBatch: " + std::to_string(values_.size()) +
                          " values for a " + std::to_string(batch_) + "x" +
                          std::to_string(dim_) + " batch");
  }
}

StateBatch StateBatch::row_vector(std::vector<double> values) {
  const std::size_t d = values.size();
  return StateBatch(1, d, std::move(values));
}

bool StateBatch::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace fixpt
