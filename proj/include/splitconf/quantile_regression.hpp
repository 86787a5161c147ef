#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "splitconf/errors.hpp"
#include "splitconf/feature_map.hpp"
#include "splitconf/scores.hpp"
#include "splitconf/simplex.hpp"

namespace splitconf {

// Fitted empirical pinball minimizer theta_hat with its optimality
// certificate: dual variables eta (paper convention, eta_i in
// [-(1-alpha), alpha] with sum_i eta_i phi(X_i) = 0) and the interpolation
// set I0 of points the threshold function passes through.
struct QuantileFit {
  std::vector<double> theta;
  double alpha = 0.0;
  double objective = 0.0;
  std::vector<double> eta;
  std::vector<std::size_t> interp_set;
  SolverStatus solver_status = SolverStatus::optimal;
  double tol = 1e-9;
  double max_eta_clip = 0.0;
  std::size_t iterations = 0;

  double fitted(std::span<const double> phi_x) const {
    if (phi_x.size() != theta.size()) {
      throw invalid_input_error("QuantileFit::fitted: dimension mismatch");
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) acc += theta[j] * phi_x[j];
    return acc;
  }
};

namespace detail {

inline std::vector<double> column_scales(const CalibrationSample& sample) {
  std::vector<double> scale(sample.dim(), 0.0);
  for (std::size_t i = 0; i < sample.n(); ++i) {
    auto r = sample.row(i);
    for (std::size_t j = 0; j < sample.dim(); ++j) {
      scale[j] = std::max(scale[j], std::abs(r[j]));
    }
  }
  for (double& v : scale) {
    if (v == 0.0) v = 1.0;
  }
  return scale;
}

}  // namespace detail

// Solves min_theta (1/n) sum_i l_alpha(<theta, phi(X_i)> - S_i) with the
// in-tree simplex, returning a vertex solution.  Columns of Phi are
// equilibrated to unit max-absolute-value before the solve and the solution
// is unscaled afterwards.
inline QuantileFit fit_quantile_regression(const CalibrationSample& sample,
                                           Level alpha, double tol = 1e-9,
                                           const SimplexOptions* options = nullptr,
                                           const SimplexBasis* warm = nullptr,
                                           SimplexBasis* basis_out = nullptr) {
  if (!(tol > 0.0)) {
    throw invalid_input_error("fit_quantile_regression: tol must be positive");
  }
  const std::size_t n = sample.n();
  const std::size_t d = sample.dim();

  const std::vector<double> scale = detail::column_scales(sample);
  std::vector<double> phi(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = sample.row(i);
    for (std::size_t j = 0; j < d; ++j) phi[i * d + j] = r[j] / scale[j];
  }

  SimplexOptions opts = options != nullptr ? *options : SimplexOptions{};
  opts.interp_tol = tol;
  PinballSimplex solver(std::move(phi), n, d,
                        std::vector<double>(sample.scores().begin(),
                                            sample.scores().end()),
                        alpha.alpha(), opts);
  SimplexResult res = solver.solve(warm);
  if (basis_out != nullptr) *basis_out = solver.basis();

  QuantileFit fit;
  fit.alpha = alpha.alpha();
  fit.tol = tol;
  fit.theta.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) fit.theta[j] = res.theta[j] / scale[j];
  fit.eta = std::move(res.eta);
  fit.solver_status = res.status;
  fit.iterations = res.iterations;
  fit.max_eta_clip = res.max_eta_clip;
  if (fit.max_eta_clip > tol) {
    throw solver_error("quantile regression: dual variable exceeded its box "
                       "by more than tol");
  }

  double obj = 0.0;
  fit.interp_set.clear();
  for (std::size_t i = 0; i < n; ++i) {
    const double resid = fit.fitted(sample.row(i)) - sample.score(i);
    obj += pinball_loss(resid, alpha);
    if (std::abs(resid) <= tol * (1.0 + std::abs(sample.score(i)))) {
      fit.interp_set.push_back(i);
    }
  }
  fit.objective = obj / static_cast<double>(n);
  return fit;
}

// Right directional derivative of the empirical pinball objective at the
// fit, in direction u.  Interpolated points contribute the one-sided kink
// derivative alpha [delta]_+ + (1-alpha) [-delta]_+, so the value is
// >= -tol in every direction at an optimum.
inline double directional_derivative(const QuantileFit& fit,
                                     const CalibrationSample& sample,
                                     std::span<const double> u) {
  if (u.size() != sample.dim() || fit.theta.size() != sample.dim()) {
    throw invalid_input_error("directional_derivative: dimension mismatch");
  }
  const double a = fit.alpha;
  double acc = 0.0;
  for (std::size_t i = 0; i < sample.n(); ++i) {
    auto phi_i = sample.row(i);
    double delta = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) delta += u[j] * phi_i[j];
    const double resid = fit.fitted(phi_i) - sample.score(i);
    const double band = fit.tol * (1.0 + std::abs(sample.score(i)));
    if (resid > band) {
      acc += a * delta;
    } else if (resid < -band) {
      acc += -(1.0 - a) * delta;
    } else {
      acc += a * std::max(delta, 0.0) + (1.0 - a) * std::max(-delta, 0.0);
    }
  }
  return acc / static_cast<double>(sample.n());
}

// || sum_i eta_i phi(X_i) ||_2 / n; zero (up to tol) at optimality.
inline double kkt_residual(const QuantileFit& fit,
                           const CalibrationSample& sample) {
  if (fit.eta.size() != sample.n()) {
    throw invalid_input_error("kkt_residual: eta length mismatch");
  }
  std::vector<double> acc(sample.dim(), 0.0);
  for (std::size_t i = 0; i < sample.n(); ++i) {
    auto phi_i = sample.row(i);
    for (std::size_t j = 0; j < sample.dim(); ++j) {
      acc[j] += fit.eta[i] * phi_i[j];
    }
  }
  double norm2 = 0.0;
  for (double v : acc) norm2 += v * v;
  return std::sqrt(norm2) / static_cast<double>(sample.n());
}

// Largest |<u, phi(X_i)>| over the sample; the empirical b_phi(u) used by
// the weighted-coverage identities.
inline double empirical_weight_bound(const CalibrationSample& sample,
                                     std::span<const double> u) {
  double best = 0.0;
  for (std::size_t i = 0; i < sample.n(); ++i) {
    auto phi_i = sample.row(i);
    double w = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) w += u[j] * phi_i[j];
    best = std::max(best, std::abs(w));
  }
  return best;
}

}  // namespace splitconf
