#pragma once

// Dense helpers for the small n x n blocks used throughout. Row-major, no aliasing.

#include <cstddef>
#include <span>
#include <vector>

namespace volterra::la {

inline void zero(std::span<double> a) {
  for (double& v : a) v = 0.0;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double sqnorm(std::span<const double> x) { return dot(x, x); }

// y += alpha * A x, A is n x n
inline void gemv_acc(std::size_t n, double alpha, const double* a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * x[j];
    y[i] += alpha * s;
  }
}

// y += alpha * A^T x
inline void gemv_t_acc(std::size_t n, double alpha, const double* a, const double* x, double* y) {
  for (std::size_t j = 0; j < n; ++j) {
    const double xj = alpha * x[j];
    for (std::size_t i = 0; i < n; ++i) y[i] += a[j * n + i] * xj;
  }
}

// C += alpha * op(A) op(B); ta/tb select transposes.
inline void gemm_acc(std::size_t n, double alpha, const double* a, bool ta, const double* b, bool tb,
                     double* c) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double aik = ta ? a[k * n + i] : a[i * n + k];
        const double bkj = tb ? b[j * n + k] : b[k * n + j];
        s += aik * bkj;
      }
      c[i * n + j] += alpha * s;
    }
}

// x^T A y
inline double quad(std::size_t n, const double* a, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s += x[i] * a[i * n + j] * y[j];
  return s;
}

inline std::vector<double> identity(std::size_t n, double scale = 1.0) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = scale;
  return m;
}

inline double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = v < 0 ? (-v > m ? -v : m) : (v > m ? v : m);
  return m;
}

}  // namespace volterra::la
