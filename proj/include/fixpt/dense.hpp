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

#ifndef FIXPT_DENSE_HPP
#define FIXPT_DENSE_HPP

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace fixpt {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles. Small by intent: the Anderson
/// subproblems are (m+1)x(m+1) and the desk-scale maps are at most a few
/// hundred wide.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  Matrix transposed() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Mixing coefficients and Lagrange multiplier of one extrapolation step.
struct AndersonStepSolution {
  double nu = 0.0;
  Vector alpha;
};

Vector matvec(const Matrix& a, std::span<const double> v);

/// v^T A, i.e. A^T v without forming the transpose.
Vector matvec_transposed(const Matrix& a, std::span<const double> v);

/// G^T G + lambda I.
Matrix gram(const Matrix& g, double lambda);

/// Solves [[0, 1^T], [1, H]] [nu; alpha] = [1; 0]. `step` is carried into
/// the SingularSystem error so callers can locate the failing iteration.
AndersonStepSolution solve_bordered(const Matrix& h, long step = -1);

/// Gaussian elimination with partial pivoting. Throws SingularSystem when a
/// pivot falls below 1e-14 times the largest entry of `a`.
Vector solve_dense(Matrix a, Vector b);

Vector axpy(double a, std::span<const double> x, std::span<const double> y);
double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> v);
Vector lin_comb(std::span<const double> coeffs, const std::vector<Vector>& columns);

}  // namespace fixpt

#endif  // FIXPT_DENSE_HPP
