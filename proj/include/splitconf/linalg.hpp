#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace splitconf::detail {

// Dense k x k inverse via Gauss-Jordan with partial pivoting.  Returns
// false when a pivot falls below tol relative to the matrix scale.
inline bool invert_square(std::vector<double>& a, std::size_t k,
                          double tol = 1e-12) {
  if (k == 0) return true;
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return false;
  const double piv_tol = tol * scale;

  std::vector<double> inv(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) inv[i * k + i] = 1.0;

  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    double best = std::abs(a[col * k + col]);
    for (std::size_t r = col + 1; r < k; ++r) {
      const double v = std::abs(a[r * k + col]);
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best <= piv_tol) return false;
    if (piv != col) {
      for (std::size_t j = 0; j < k; ++j) {
        std::swap(a[piv * k + j], a[col * k + j]);
        std::swap(inv[piv * k + j], inv[col * k + j]);
      }
    }
    const double d = a[col * k + col];
    for (std::size_t j = 0; j < k; ++j) {
      a[col * k + j] /= d;
      inv[col * k + j] /= d;
    }
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const double f = a[r * k + col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < k; ++j) {
        a[r * k + j] -= f * a[col * k + j];
        inv[r * k + j] -= f * inv[col * k + j];
      }
    }
  }
  a = std::move(inv);
  return true;
}

inline void matvec(std::span<const double> a, std::size_t rows,
                   std::size_t cols, std::span<const double> x,
                   std::span<double> out) {
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    const double* r = a.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += r[j] * x[j];
    out[i] = acc;
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Solves the normal equations (X^T X) w = X^T y for row-major X (n x p).
// Falls back to a ridge of 1e-10 * I when the Gram matrix is singular;
// *degenerate reports whether the fallback fired.
inline std::vector<double> least_squares(std::span<const double> x,
                                         std::size_t n, std::size_t p,
                                         std::span<const double> y,
                                         bool* degenerate = nullptr) {
  std::vector<double> gram(p * p, 0.0);
  std::vector<double> rhs(p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * p;
    for (std::size_t a = 0; a < p; ++a) {
      rhs[a] += row[a] * y[i];
      for (std::size_t b = a; b < p; ++b) gram[a * p + b] += row[a] * row[b];
    }
  }
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < a; ++b) gram[a * p + b] = gram[b * p + a];
  }

  std::vector<double> g = gram;
  const bool plain_ok = invert_square(g, p);
  bool ok = plain_ok;
  if (!plain_ok) {
    g = gram;
    for (std::size_t a = 0; a < p; ++a) g[a * p + a] += 1e-10;
    ok = invert_square(g, p);
  }
  if (degenerate) *degenerate = !plain_ok;
  std::vector<double> w(p, 0.0);
  if (ok) matvec(g, p, p, rhs, w);
  return w;
}

}  // namespace splitconf::detail
