#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitconf/errors.hpp"
#include "splitconf/rng.hpp"

namespace splitconf {

// Target miscoverage level, constrained to (0, 1).
class Level {
 public:
  explicit Level(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0) || !(alpha < 1.0)) {
      throw invalid_input_error("level alpha must lie in (0,1), got " +
                                std::to_string(alpha));
    }
  }
  double alpha() const { return alpha_; }

 private:
  double alpha_;
};

// Scale and seed for randomized tie-breaking of scores.
struct JitterSpec {
  double scale;
  std::uint64_t seed;

  JitterSpec(double scale, std::uint64_t seed) : scale(scale), seed(seed) {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
      throw invalid_input_error("jitter scale must be a positive real");
    }
  }
};

inline void require_finite_scores(std::span<const double> scores) {
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw invalid_input_error("scores must be finite");
    }
  }
}

// Pinball (quantile) loss: alpha * [t]_+ + (1 - alpha) * [-t]_+.
inline double pinball_loss(double t, Level alpha) {
  if (!std::isfinite(t)) {
    throw invalid_input_error("pinball_loss: non-finite argument");
  }
  const double a = alpha.alpha();
  return a * std::max(t, 0.0) + (1.0 - a) * std::max(-t, 0.0);
}

namespace detail {

// Order-statistic rank k = ceil(beta * n), guarded against the usual
// floating-point overshoot when beta * n is an exact integer.
inline std::size_t quantile_rank(double beta, std::size_t n) {
  const double x = beta * static_cast<double>(n);
  const double guarded = x - 1e-9 * std::max(1.0, x);
  auto k = static_cast<std::size_t>(std::ceil(guarded));
  if (k < 1) k = 1;
  if (k > n) k = n;
  return k;
}

}  // namespace detail

// Empirical beta-quantile: the order statistic S_(k), k = ceil(beta * n).
inline double empirical_quantile(std::span<const double> scores, double beta) {
  if (scores.empty()) {
    throw invalid_input_error("empirical_quantile: empty score list");
  }
  if (!(beta > 0.0) || beta > 1.0 || !std::isfinite(beta)) {
    throw invalid_input_error("empirical_quantile: beta must lie in (0,1]");
  }
  require_finite_scores(scores);
  const std::size_t k = detail::quantile_rank(beta, scores.size());
  std::vector<double> work(scores.begin(), scores.end());
  std::nth_element(work.begin(), work.begin() + (k - 1), work.end());
  return work[k - 1];
}

// Split-conformal threshold Quant_{(1-alpha)(1+1/n)}; caps at the maximum
// score once (1-alpha)(n+1) exceeds n.
inline double enlarged_quantile(std::span<const double> scores, Level alpha) {
  if (scores.empty()) {
    throw invalid_input_error("enlarged_quantile: empty score list");
  }
  const double n = static_cast<double>(scores.size());
  const double beta = std::min(1.0, (1.0 - alpha.alpha()) * (1.0 + 1.0 / n));
  return empirical_quantile(scores, beta);
}

// Scale-aware default: 1e-10 * (max - min + 1), so jitter tracks the data's
// magnitude instead of a fixed absolute size.
inline double default_jitter_scale(std::span<const double> scores) {
  if (scores.empty()) return 1e-10;
  auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  return 1e-10 * (*hi - *lo + 1.0);
}

// Adds U_i ~ Uniform(-scale, scale), i.i.d. given the seed.  Almost surely
// breaks all ties; scores whose gaps exceed 2*scale keep their order.
inline std::vector<double> jitter_scores(std::span<const double> scores,
                                         const JitterSpec& spec) {
  require_finite_scores(scores);
  SplitRng rng = SplitRng(spec.seed).split(0x6a697474);
  std::vector<double> out(scores.begin(), scores.end());
  for (double& s : out) {
    s += rng.uniform(-spec.scale, spec.scale);
  }
  return out;
}

// True when all pairwise gaps exceed min_gap (used to gate the invariants
// that require distinct scores).
inline bool scores_distinct(std::span<const double> scores, double min_gap) {
  std::vector<double> work(scores.begin(), scores.end());
  std::sort(work.begin(), work.end());
  for (std::size_t i = 1; i < work.size(); ++i) {
    if (work[i] - work[i - 1] <= min_gap) return false;
  }
  return true;
}

}  // namespace splitconf
