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

#include "fixpt/dense.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "fixpt/errors.hpp"

namespace fixpt {

namespace {

constexpr double kPivotRelTol = 1e-14;

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw InvalidArgument(std::string(what) + ": dimension mismatch (" +
                          std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

// In-place LU with partial pivoting applied to a single right-hand side.
bool eliminate(Matrix& a, Vector& b) {
  const std::size_t n = a.rows();
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  const double threshold = kPivotRelTol * scale;

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    }
    if (!(std::abs(a(piv, col)) > threshold)) return false;
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(piv, j), a(col, j));
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a(r, j) -= f * a(col, j);
      b[r] -= f * b[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * b[j];
    b[i] = s / a(i, i);
  }
  return true;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw InvalidArgument("Matrix: entries length " + std::to_string(data_.size()) +
                          " != rows*cols " + std::to_string(rows_ * cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require_same(r.size(), cols_, "Matrix");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Vector matvec(const Matrix& a, std::span<const double> v) {
  require_same(a.cols(), v.size(), "matvec");
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * v[j];
    out[i] = s;
  }
  return out;
}

Vector matvec_transposed(const Matrix& a, std::span<const double> v) {
  require_same(a.rows(), v.size(), "matvec_transposed");
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    const double vi = v[i];
    if (vi == 0.0) continue;
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += vi * r[j];
  }
  return out;
}

Matrix gram(const Matrix& g, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("gram: lambda must be >= 0");
  const std::size_t n = g.cols();
  Matrix h(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < g.rows(); ++r) s += g(r, i) * g(r, j);
      h(i, j) = s;
      h(j, i) = s;
    }
    h(i, i) += lambda;
  }
  return h;
}

AndersonStepSolution solve_bordered(const Matrix& h, long step) {
  const std::size_t n = h.rows();
  if (n == 0 || h.cols() != n) {
    throw InvalidArgument("solve_bordered: H must be square with n >= 1");
  }
  // alpha is invariant to scaling H, so normalize it to unit max entry;
  // otherwise a tiny H (late iterations, small lambda) would look singular
  // next to the unit border.
  double scale = 0.0;
  for (double v : h.data()) scale = std::max(scale, std::abs(v));
  if (!std::isfinite(scale)) throw InvalidArgument("solve_bordered: non-finite H");
  const double inv = scale > 0.0 ? 1.0 / scale : 1.0;

  Matrix k(n + 1, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    k(0, i + 1) = 1.0;
    k(i + 1, 0) = 1.0;
    for (std::size_t j = 0; j < n; ++j) k(i + 1, j + 1) = h(i, j) * inv;
  }
  Vector rhs(n + 1, 0.0);
  rhs[0] = 1.0;
  if (!eliminate(k, rhs)) {
    throw SingularSystem("solve_bordered: singular bordered system", step);
  }
  AndersonStepSolution out;
  out.nu = scale > 0.0 ? rhs[0] * scale : rhs[0];
  out.alpha.assign(rhs.begin() + 1, rhs.end());
  return out;
}

Vector solve_dense(Matrix a, Vector b) {
  if (a.rows() != a.cols()) throw InvalidArgument("solve_dense: matrix must be square");
  require_same(a.rows(), b.size(), "solve_dense");
  if (!eliminate(a, b)) throw SingularSystem("solve_dense: singular matrix", -1);
  return b;
}

Vector axpy(double a, std::span<const double> x, std::span<const double> y) {
  require_same(x.size(), y.size(), "axpy");
  Vector out(y.begin(), y.end());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += a * x[i];
  return out;
}

double dot(std::span<const double> x, std::span<const double> y) {
  require_same(x.size(), y.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm2(std::span<const double> v) {
  // Scaled accumulation so that huge iterates of a diverging map do not
  // overflow before the divergence guard sees them.
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double s = 0.0;
  for (double x : v) {
    const double t = x / scale;
    s += t * t;
  }
  return scale * std::sqrt(s);
}

Vector lin_comb(std::span<const double> coeffs, const std::vector<Vector>& columns) {
  require_same(coeffs.size(), columns.size(), "lin_comb");
  if (columns.empty()) return {};
  Vector out(columns.front().size(), 0.0);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    require_same(columns[i].size(), out.size(), "lin_comb");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += coeffs[i] * columns[i][j];
  }
  return out;
}

}  // namespace fixpt
