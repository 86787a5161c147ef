#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitconf/errors.hpp"
#include "splitconf/feature_map.hpp"
#include "splitconf/full_conformal.hpp"
#include "splitconf/quantile_regression.hpp"
#include "splitconf/rng.hpp"
#include "splitconf/scores.hpp"

namespace splitconf {

enum class RuleKind : std::uint8_t {
  static_threshold,
  adaptive,
  two_sided,
  grid_full_conformal,
};

enum class CorrectionKind : std::uint8_t { none, naive, scaling };

inline const char* to_string(CorrectionKind k) {
  switch (k) {
    case CorrectionKind::none: return "none";
    case CorrectionKind::naive: return "naive";
    case CorrectionKind::scaling: return "scaling";
  }
  return "?";
}

// How to adjust the fitted level for the dimension of the threshold class.
struct CorrectionPolicy {
  CorrectionKind kind = CorrectionKind::none;
  std::size_t d = 0;
  std::size_t n = 0;
};

// Fitted level under the policy:
//   naive:   alpha = (1 + d/n) alpha_des - d/n
//   scaling: alpha = (alpha_des - d/(2n)) / (1 - d/n)
// Throws infeasible_correction_error naming the smallest workable n when
// the corrected level leaves (0,1).
inline Level correct_level(Level alpha_des, const CorrectionPolicy& policy) {
  if (policy.kind == CorrectionKind::none) return alpha_des;
  if (policy.d == 0 || policy.n == 0) {
    throw invalid_input_error("correct_level: policy needs d > 0 and n > 0");
  }
  const double a = alpha_des.alpha();
  const double d = static_cast<double>(policy.d);
  const double n = static_cast<double>(policy.n);

  if (policy.kind == CorrectionKind::naive) {
    const double corrected = (1.0 + d / n) * a - d / n;
    if (!(corrected > 0.0)) {
      const auto minimal =
          static_cast<std::size_t>(std::floor(d * (1.0 - a) / a + 1e-12)) + 1;
      throw infeasible_correction_error(
          "naive correction infeasible: needs n >= " + std::to_string(minimal),
          minimal);
    }
    return Level(corrected);
  }

  // scaling
  std::size_t minimal = policy.d + 1;
  minimal = std::max(minimal, static_cast<std::size_t>(
                                  std::floor(d / (2.0 * a) + 1e-12)) + 1);
  if (policy.n <= policy.d || !(a - d / (2.0 * n) > 0.0)) {
    throw infeasible_correction_error(
        "scaling correction infeasible: needs n >= " + std::to_string(minimal),
        minimal);
  }
  const double corrected = (a - d / (2.0 * n)) / (1.0 - d / n);
  if (!(corrected < 1.0)) {
    const auto min_hi = static_cast<std::size_t>(std::floor(
                            d / (2.0 * (1.0 - a)) + 1e-12)) + 1;
    throw infeasible_correction_error(
        "scaling correction infeasible: needs n >= " + std::to_string(min_hi),
        std::max(minimal, min_hi));
  }
  return Level(corrected);
}

// A calibrated threshold rule mapping x to a score-acceptance region.
// Coverage uses <= throughout: a score equal to the threshold is covered.
struct ConfidenceRule {
  RuleKind kind = RuleKind::static_threshold;
  double alpha_desired = 0.0;
  double alpha_fitted = 0.0;
  std::string feature_map_name;
  std::size_t dim = 0;

  std::optional<double> tau;                         // static
  std::optional<std::vector<double>> theta;          // adaptive
  std::optional<std::vector<double>> theta_lower;    // two-sided
  std::optional<std::vector<double>> theta_upper;
  std::optional<JitterSpec> jitter;                  // adaptive, randomized
  bool crossing = false;  // two-sided: lower exceeded upper on calibration

  // grid-full-conformal rules evaluate membership by refitting, so they
  // carry the calibration sample and a warm-start vertex
  std::shared_ptr<const CalibrationSample> sample;
  std::shared_ptr<const SimplexBasis> warm_basis;
};

inline ConfidenceRule calibrate_static(std::span<const double> scores,
                                       Level alpha, bool enlarged) {
  ConfidenceRule rule;
  rule.kind = RuleKind::static_threshold;
  rule.alpha_desired = alpha.alpha();
  rule.alpha_fitted = alpha.alpha();
  rule.feature_map_name = "constant";
  rule.dim = 0;
  rule.tau = enlarged ? enlarged_quantile(scores, alpha)
                      : empirical_quantile(scores, 1.0 - alpha.alpha());
  return rule;
}

// Split-conformal rule with an adaptive threshold <theta_hat, phi(x)>, fit
// at the corrected level on (optionally jittered) scores.  When a jitter
// spec is given, membership later draws a fresh U per test point.
inline ConfidenceRule calibrate_adaptive(const CalibrationSample& sample,
                                         Level alpha_des,
                                         const CorrectionPolicy& policy,
                                         std::optional<JitterSpec> jitter = {},
                                         double tol = 1e-9,
                                         QuantileFit* fit_out = nullptr) {
  const Level fitted = correct_level(alpha_des, policy);
  QuantileFit fit;
  if (jitter.has_value()) {
    fit = fit_quantile_regression(
        sample.with_scores(jitter_scores(sample.scores(), *jitter)), fitted,
        tol);
  } else {
    fit = fit_quantile_regression(sample, fitted, tol);
  }

  ConfidenceRule rule;
  rule.kind = RuleKind::adaptive;
  rule.alpha_desired = alpha_des.alpha();
  rule.alpha_fitted = fitted.alpha();
  rule.feature_map_name = sample.feature_map_name();
  rule.dim = sample.dim();
  rule.theta = fit.theta;
  rule.jitter = jitter;
  if (fit_out != nullptr) *fit_out = std::move(fit);
  return rule;
}

// Two-sided rule {y : <theta_lo, phi(x)> <= y <= <theta_up, phi(x)>}: two
// independent pinball fits at level alpha/2 per tail (the lower tail via
// sign-flipped scores), with the correction applied to alpha before the
// even split.
inline ConfidenceRule calibrate_two_sided(const CalibrationSample& sample,
                                          Level alpha_des,
                                          const CorrectionPolicy& policy,
                                          double tol = 1e-9) {
  const Level fitted = correct_level(alpha_des, policy);
  const Level half(fitted.alpha() / 2.0);

  QuantileFit upper = fit_quantile_regression(sample, half, tol);

  std::vector<double> neg(sample.scores().begin(), sample.scores().end());
  for (double& v : neg) v = -v;
  QuantileFit lower_neg =
      fit_quantile_regression(sample.with_scores(std::move(neg)), half, tol);

  ConfidenceRule rule;
  rule.kind = RuleKind::two_sided;
  rule.alpha_desired = alpha_des.alpha();
  rule.alpha_fitted = fitted.alpha();
  rule.feature_map_name = sample.feature_map_name();
  rule.dim = sample.dim();
  rule.theta_upper = upper.theta;
  rule.theta_lower = lower_neg.theta;
  for (double& v : *rule.theta_lower) v = -v;

  for (std::size_t i = 0; i < sample.n() && !rule.crossing; ++i) {
    auto phi_i = sample.row(i);
    double lo = 0.0, up = 0.0;
    for (std::size_t j = 0; j < sample.dim(); ++j) {
      lo += (*rule.theta_lower)[j] * phi_i[j];
      up += (*rule.theta_upper)[j] * phi_i[j];
    }
    if (lo > up + tol * (1.0 + std::abs(up))) rule.crossing = true;
  }
  return rule;
}

// Full conformal baseline as a rule.  Membership refits the augmented
// quantile regression with the queried score as the candidate.
inline ConfidenceRule calibrate_full_grid(
    std::shared_ptr<const CalibrationSample> sample, Level alpha,
    double tol = 1e-9) {
  if (!sample) throw invalid_input_error("calibrate_full_grid: null sample");
  SimplexBasis basis;
  fit_quantile_regression(*sample, alpha, tol, nullptr, nullptr, &basis);

  ConfidenceRule rule;
  rule.kind = RuleKind::grid_full_conformal;
  rule.alpha_desired = alpha.alpha();
  rule.alpha_fitted = alpha.alpha();
  rule.feature_map_name = sample->feature_map_name();
  rule.dim = sample->dim();
  rule.sample = std::move(sample);
  rule.warm_basis = std::make_shared<SimplexBasis>(std::move(basis));
  return rule;
}

namespace detail {

inline double dot_checked(std::span<const double> a,
                          std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw invalid_input_error(std::string(what) + ": dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  return acc;
}

}  // namespace detail

// Membership of a score in the rule's acceptance region at phi(x).  Jittered
// adaptive rules need an RNG stream for the fresh test-time draw.
inline bool covers(const ConfidenceRule& rule, std::span<const double> phi_x,
                   double score, SplitRng* rng = nullptr) {
  if (!std::isfinite(score)) {
    throw invalid_input_error("covers: non-finite score");
  }
  switch (rule.kind) {
    case RuleKind::static_threshold:
      return score <= *rule.tau;
    case RuleKind::adaptive: {
      double thr = detail::dot_checked(*rule.theta, phi_x, "covers");
      if (rule.jitter.has_value()) {
        if (rng == nullptr) {
          throw invalid_input_error(
              "covers: jittered rule needs an RNG stream");
        }
        thr += rng->uniform(-rule.jitter->scale, rule.jitter->scale);
      }
      return score <= thr;
    }
    case RuleKind::two_sided: {
      const double lo =
          detail::dot_checked(*rule.theta_lower, phi_x, "covers");
      const double up =
          detail::dot_checked(*rule.theta_upper, phi_x, "covers");
      return lo <= score && score <= up;
    }
    case RuleKind::grid_full_conformal: {
      FullConformalEvaluator ev(*rule.sample, Level(rule.alpha_fitted));
      return ev.covers(phi_x, score, WarmMode::from_base);
    }
  }
  throw invalid_input_error("covers: unknown rule kind");
}

// Width of the prediction interval implied by the rule at phi(x).  Adaptive
// rules are interpreted with absolute-error score semantics (|y - f(x)| <=
// h(x), width 2 h(x)); two-sided rules report upper - lower, 0 on crossing.
inline double interval_width(const ConfidenceRule& rule,
                             std::span<const double> phi_x) {
  switch (rule.kind) {
    case RuleKind::adaptive: {
      const double h =
          detail::dot_checked(*rule.theta, phi_x, "interval_width");
      return 2.0 * std::max(h, 0.0);
    }
    case RuleKind::two_sided: {
      const double lo =
          detail::dot_checked(*rule.theta_lower, phi_x, "interval_width");
      const double up =
          detail::dot_checked(*rule.theta_upper, phi_x, "interval_width");
      return std::max(up - lo, 0.0);
    }
    default:
      throw unsupported_error(
          "interval_width: rule kind has no interval semantics");
  }
}

}  // namespace splitconf
