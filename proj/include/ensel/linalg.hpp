#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ensel {

using Vector = std::vector<double>;

// Dense row-major matrix. Deliberately minimal: the library's reproducibility
// contract requires fixed left-to-right accumulation order in every product,
// which rules out delegating to a BLAS that may reorder or fuse.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) throw std::invalid_argument("Matrix: value count does not match shape");
  }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
};

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline Vector matvec(const Matrix& m, const Vector& x) {
  if (x.size() != m.cols) throw std::invalid_argument("matvec: dimension mismatch");
  Vector out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x.data(), m.cols);
  return out;
}

// c = a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: dimension mismatch");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c.at(i, j) += aik * b.at(k, j);
    }
  return c;
}

// y^T x with y sparse as (index, coefficient) pairs.
inline double sparse_dot(const std::vector<std::pair<std::size_t, double>>& coeffs, const Vector& x) {
  double s = 0.0;
  for (const auto& [i, c] : coeffs) s += c * x.at(i);
  return s;
}

inline double linf_distance(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("linf_distance: dimension mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
    if (v > d) d = v;
  }
  return d;
}

}  // namespace ensel
