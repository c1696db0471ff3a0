#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mmse {

using Vec = std::vector<double>;

/// Dense row-major f64 matrix. All training math stays in f64.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  std::span<const double> row_span(std::size_t r) const { return {row(r), cols}; }
  std::span<double> row_span(std::size_t r) { return {row(r), cols}; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// out = W x  (W is rows x cols, x has cols entries)
inline void matvec(const Matrix& w, std::span<const double> x, std::span<double> out) {
  for (std::size_t r = 0; r < w.rows; ++r) out[r] = dot(w.row_span(r), x);
}

/// out += W^T x  (x has rows entries, out has cols entries)
inline void matvec_transpose_add(const Matrix& w, std::span<const double> x,
                                 std::span<double> out) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double xr = x[r];
    const double* wr = w.row(r);
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += xr * wr[c];
  }
}

/// W += a * x y^T  (outer-product accumulate)
inline void outer_add(Matrix& w, double a, std::span<const double> x,
                      std::span<const double> y) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double ax = a * x[r];
    double* wr = w.row(r);
    for (std::size_t c = 0; c < w.cols; ++c) wr[c] += ax * y[c];
  }
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace mmse
