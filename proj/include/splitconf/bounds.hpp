#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "splitconf/errors.hpp"

namespace splitconf {

namespace detail {

inline void require_prob(double delta, const char* what) {
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw invalid_input_error(std::string(what) +
                              ": delta must lie in (0,1)");
  }
}

}  // namespace detail

// P(coverage < 1 - alpha - gamma) <= exp(-2 n gamma^2) for the static
// empirical-quantile rule.
inline double hoeffding_failure_prob(std::size_t n, double gamma) {
  if (gamma < 0.0 || !std::isfinite(gamma)) {
    throw invalid_input_error("hoeffding_failure_prob: gamma must be >= 0");
  }
  return std::exp(-2.0 * static_cast<double>(n) * gamma * gamma);
}

// Inverse form: the slack gamma with failure probability delta.
inline double hoeffding_gamma(std::size_t n, double delta) {
  detail::require_prob(delta, "hoeffding_gamma");
  return std::sqrt(std::log(1.0 / delta) / (2.0 * static_cast<double>(n)));
}

struct BernsteinGamma {
  double gamma;        // gamma_n(delta)
  double upper_bound;  // (8/3n) log(1/delta) + sqrt(2 a(1-a) log(1/delta)/n)
};

// Bernstein-rate slack:
//   gamma_n(delta) = 4L/(3n) + sqrt((4L/(3n))^2 + 2 a(1-a) L / n),
// with L = log(1/delta).  Also returns (and checks) its closed-form upper
// bound.  alpha may sit on the boundary here; the variance term just
// vanishes.
inline BernsteinGamma bernstein_gamma(std::size_t n, double alpha,
                                      double delta) {
  detail::require_prob(delta, "bernstein_gamma");
  if (!(alpha >= 0.0) || !(alpha <= 1.0)) {
    throw invalid_input_error("bernstein_gamma: alpha must lie in [0,1]");
  }
  if (n == 0) throw invalid_input_error("bernstein_gamma: n must be >= 1");
  const double nn = static_cast<double>(n);
  const double L = std::log(1.0 / delta);
  const double lin = 4.0 * L / (3.0 * nn);
  const double var = 2.0 * alpha * (1.0 - alpha) * L / nn;
  BernsteinGamma out;
  out.gamma = lin + std::sqrt(lin * lin + var);
  out.upper_bound = 2.0 * lin + std::sqrt(var);
  if (out.gamma > out.upper_bound * (1.0 + 1e-12)) {
    throw solver_error("bernstein_gamma: closed-form upper bound violated");
  }
  return out;
}

// Dvoretzky-Kiefer-Wolfowitz uniform-CDF deviation at confidence 1 - delta.
inline double dkw_deviation(std::size_t n, double delta) {
  detail::require_prob(delta, "dkw_deviation");
  if (n == 0) throw invalid_input_error("dkw_deviation: n must be >= 1");
  return std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
}

// Additive group-conditional deviation (constant / pi_G) (sqrt((d/n)
// log(n/d)) + t); vacuous (infinite) bounds surface as +inf for tiny group
// mass.
inline double group_coverage_deviation(std::size_t n, std::size_t d, double t,
                                       double group_mass,
                                       double constant = 4.0) {
  if (n < d || d == 0) {
    throw invalid_input_error("group_coverage_deviation: requires n >= d >= 1");
  }
  if (!(group_mass > 0.0)) {
    throw invalid_input_error(
        "group_coverage_deviation: group mass must be positive");
  }
  if (t < 0.0) {
    throw invalid_input_error("group_coverage_deviation: t must be >= 0");
  }
  const double nn = static_cast<double>(n);
  const double dd = static_cast<double>(d);
  const double rate = std::sqrt(dd / nn * std::log(nn / dd));
  return constant / group_mass * (rate + t);
}

struct SharpBound {
  double one_sided;     // nonnegative-weight deviation
  double two_sided;     // distinct scores + bias deviation
  double k_n;           // 1 + log2 n
  double failure_prob;  // 2 K_n e^{-t} + e^{-d log n - t}
  double c;             // multiplier the bound is stated up to
};

// Rate calculators for the sharp weighted-coverage deviations:
//   one-sided: c [ sqrt(b_phi(u) alpha E[w]) sqrt((d log n + t)/n)
//                  + b_phi (d log n + t)/n ]
//   two-sided: c [ b_phi(u) sqrt(alpha) sqrt((d log n + t)/n)
//                  + b_phi (d log n + t)/n ]
// The absolute constant is never pinned by the theory, so c is an explicit
// parameter and results are "bounds up to constant".
inline SharpBound sharp_weighted_bound(std::size_t n, std::size_t d,
                                       double alpha, double t, double b_phi,
                                       double b_phi_u, double mean_w,
                                       double c = 1.0) {
  if (n < d || d == 0 || n <= 1) {
    throw invalid_input_error(
        "sharp_weighted_bound: requires n >= d >= 1 and n > 1");
  }
  if (!(alpha >= 0.0) || !(alpha <= 1.0)) {
    throw invalid_input_error("sharp_weighted_bound: alpha must lie in [0,1]");
  }
  if (t < 0.0 || b_phi < 0.0 || b_phi_u < 0.0 || mean_w < 0.0) {
    throw invalid_input_error(
        "sharp_weighted_bound: t, b_phi, b_phi(u), mean_w must be >= 0");
  }
  const double nn = static_cast<double>(n);
  const double complexity =
      (static_cast<double>(d) * std::log(nn) + t) / nn;
  const double root = std::sqrt(complexity);
  SharpBound out;
  out.c = c;
  out.one_sided =
      c * (std::sqrt(b_phi_u * alpha * mean_w) * root + b_phi * complexity);
  out.two_sided =
      c * (b_phi_u * std::sqrt(alpha) * root + b_phi * complexity);
  out.k_n = 1.0 + std::log2(nn);
  out.failure_prob = 2.0 * out.k_n * std::exp(-t) +
                     std::exp(-static_cast<double>(d) * std::log(nn) - t);
  return out;
}

}  // namespace splitconf
