#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "splitconf/errors.hpp"
#include "splitconf/feature_map.hpp"
#include "splitconf/quantile_regression.hpp"
#include "splitconf/scores.hpp"
#include "splitconf/simplex.hpp"

namespace splitconf {

// Candidate-score grid for the discretized full conformal set.
struct GridSpec {
  double lo;
  double hi;
  std::size_t num_points;

  GridSpec(double lo, double hi, std::size_t num_points)
      : lo(lo), hi(hi), num_points(num_points) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
      throw invalid_input_error("GridSpec: requires finite lo < hi");
    }
    if (num_points < 2) {
      throw invalid_input_error("GridSpec: needs at least two points");
    }
  }

  double point(std::size_t k) const {
    return lo + (hi - lo) * static_cast<double>(k) /
                    static_cast<double>(num_points - 1);
  }

  // Default placement: the acceptance boundary sits near the upper scores,
  // so pad more above than below.
  static GridSpec spanning_scores(std::span<const double> scores,
                                  std::size_t num_points = 512) {
    auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    double range = *hi_it - *lo_it;
    if (range <= 0.0) range = 1.0;
    return GridSpec(*lo_it - 0.1 * range, *hi_it + 0.5 * range, num_points);
  }
};

enum class WarmMode { none, from_base, chained };

struct FullConformalResult {
  std::vector<std::uint8_t> accepted;  // per grid candidate
  std::vector<std::uint8_t> solved;    // solver ok per candidate
  std::optional<double> largest_accepted;
  bool grid_covers_scores = true;      // false -> grid misses the score range
};

// Refits the augmented (n+1)-point quantile regression for candidate scores
// at a fixed test feature vector.  The candidate t is accepted when
// t <= h_hat_{n+1,t}(x_test) (with a small relative band so the decision is
// stable when t is exactly interpolated).
class FullConformalEvaluator {
 public:
  FullConformalEvaluator(const CalibrationSample& base, Level alpha,
                         SimplexOptions opts = {})
      : n_(base.n()),
        d_(base.dim()),
        alpha_(alpha.alpha()),
        scale_(detail::column_scales(base)),
        aug_(make_augmented(base, scale_), base.n() + 1, base.dim(),
             make_augmented_scores(base), alpha.alpha(),
             with_interp_tol(opts)) {
    // base vertex on the n calibration points; all later refits warm-start
    // from it (or from the previous candidate's vertex)
    std::vector<double> phi_base(base.n() * base.dim());
    std::vector<double> s_base(base.scores().begin(), base.scores().end());
    for (std::size_t i = 0; i < base.n(); ++i) {
      auto r = base.row(i);
      for (std::size_t j = 0; j < d_; ++j) {
        phi_base[i * d_ + j] = r[j] / scale_[j];
      }
    }
    PinballSimplex base_solver(std::move(phi_base), n_, d_, std::move(s_base),
                               alpha_, with_interp_tol(opts));
    SimplexResult res = base_solver.solve();
    base_basis_ = base_solver.basis();
    base_ok_ = res.status != SolverStatus::iteration_limit;
  }

  // Fitted threshold at the test point after refitting with candidate t.
  // Returns nullopt when the refit hits its iteration limit.
  std::optional<double> refit_threshold(std::span<const double> phi_test,
                                        double t, WarmMode warm) {
    if (phi_test.size() != d_) {
      throw invalid_input_error("FullConformalEvaluator: dimension mismatch");
    }
    std::vector<double> scaled(d_);
    for (std::size_t j = 0; j < d_; ++j) scaled[j] = phi_test[j] / scale_[j];
    aug_.set_row(n_, scaled);
    aug_.set_score(n_, t);

    const SimplexBasis* start = nullptr;
    if (warm == WarmMode::from_base) {
      start = &base_basis_;
    } else if (warm == WarmMode::chained) {
      start = have_last_ ? &last_basis_ : &base_basis_;
    }
    SimplexResult res = aug_.solve(start);
    if (warm == WarmMode::chained) {
      last_basis_ = aug_.basis();
      have_last_ = true;
    }
    if (res.status == SolverStatus::iteration_limit) return std::nullopt;

    double h = 0.0;  // scales cancel: theta_eq . phi_eq == theta . phi
    for (std::size_t j = 0; j < d_; ++j) h += res.theta[j] * scaled[j];
    return h;
  }

  static bool accepts(double t, double threshold) {
    return t <= threshold + 1e-7 * (1.0 + std::abs(threshold));
  }

  bool covers(std::span<const double> phi_test, double t,
              WarmMode warm = WarmMode::from_base) {
    auto h = refit_threshold(phi_test, t, warm);
    return h.has_value() && accepts(t, *h);
  }

  bool base_ok() const { return base_ok_; }

 private:
  static SimplexOptions with_interp_tol(SimplexOptions opts) {
    if (opts.interp_tol <= 0.0) opts.interp_tol = 1e-9;
    return opts;
  }

  static std::vector<double> make_augmented(const CalibrationSample& base,
                                            const std::vector<double>& scale) {
    std::vector<double> phi((base.n() + 1) * base.dim(), 0.0);
    for (std::size_t i = 0; i < base.n(); ++i) {
      auto r = base.row(i);
      for (std::size_t j = 0; j < base.dim(); ++j) {
        phi[i * base.dim() + j] = r[j] / scale[j];
      }
    }
    return phi;
  }

  static std::vector<double> make_augmented_scores(
      const CalibrationSample& base) {
    std::vector<double> s(base.scores().begin(), base.scores().end());
    s.push_back(0.0);
    return s;
  }

  std::size_t n_, d_;
  double alpha_;
  std::vector<double> scale_;
  PinballSimplex aug_;
  SimplexBasis base_basis_;
  SimplexBasis last_basis_;
  bool have_last_ = false;
  bool base_ok_ = true;
};

// Grid-discretized full conformal set at a test point: for every candidate
// t on the grid, refit on the augmented sample and keep t iff it lies below
// its own fitted threshold.
inline FullConformalResult full_conformal_membership(
    const CalibrationSample& sample, std::span<const double> phi_test,
    Level alpha, const GridSpec& grid, WarmMode warm = WarmMode::chained,
    SimplexOptions opts = {}) {
  FullConformalEvaluator ev(sample, alpha, opts);
  FullConformalResult out;
  out.accepted.assign(grid.num_points, 0);
  out.solved.assign(grid.num_points, 1);

  auto scores = sample.scores();
  auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  out.grid_covers_scores = grid.lo <= *lo_it && grid.hi >= *hi_it;

  for (std::size_t k = 0; k < grid.num_points; ++k) {
    const double t = grid.point(k);
    auto h = ev.refit_threshold(phi_test, t, warm);
    if (!h.has_value()) {
      out.solved[k] = 0;
      continue;
    }
    if (FullConformalEvaluator::accepts(t, *h)) {
      out.accepted[k] = 1;
      out.largest_accepted = t;
    }
  }
  return out;
}

}  // namespace splitconf
