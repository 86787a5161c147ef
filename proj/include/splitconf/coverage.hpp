#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitconf/conformal.hpp"
#include "splitconf/errors.hpp"
#include "splitconf/feature_map.hpp"

namespace splitconf {

// A named subset of X with total membership and, when known, its mass.
struct GroupSpec {
  std::string name;
  std::function<bool(std::span<const double>)> membership;
  std::optional<double> mass;
};

// Membership precomputed on a concrete test set.
struct GroupMask {
  std::string name;
  std::vector<std::uint8_t> flags;
  std::optional<double> mass;
};

inline GroupMask materialize_group(const GroupSpec& spec,
                                   std::span<const double> x_rows,
                                   std::size_t xdim) {
  GroupMask m;
  m.name = spec.name;
  m.mass = spec.mass;
  const std::size_t n = x_rows.size() / xdim;
  m.flags.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.flags[i] = spec.membership(x_rows.subspan(i * xdim, xdim)) ? 1 : 0;
  }
  return m;
}

// Weight direction w(x) = <u, phi(x)>.  When `nonnegative` is asserted the
// sign is validated on every evaluated point.
struct WeightSpec {
  std::vector<double> u;
  bool nonnegative = false;
};

struct GroupCoverageRow {
  std::string name;
  std::size_t count = 0;
  std::size_t covered = 0;
  double rate = std::numeric_limits<double>::quiet_NaN();  // NaN when empty
  bool empty = false;
};

struct WeightCoverageRow {
  std::vector<double> u;
  double weighted_gap = 0.0;  // mean of w(x) (1{covered} - (1-alpha))
  double mean_weight = 0.0;
  double max_abs_weight = 0.0;  // empirical b_phi(u) on the test set
};

struct CoverageReport {
  std::size_t n_test = 0;
  std::size_t covered = 0;
  double marginal_rate = 0.0;
  std::vector<GroupCoverageRow> per_group;
  std::vector<WeightCoverageRow> per_weight;
};

namespace detail {

// Compensated accumulator for the weighted gaps.
class KahanSum {
 public:
  void add(double v) {
    const double y = v - c_;
    const double t = sum_ + y;
    c_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

}  // namespace detail

// Empirical marginal / group-conditional / weighted coverage of a rule on a
// test set of (phi(x), score) pairs.  Weighted gaps follow the desired
// level: gap(u) = mean of <u,phi(x)> (1{covered} - (1 - alpha_desired)).
inline CoverageReport evaluate_coverage(const ConfidenceRule& rule,
                                        const CalibrationSample& test,
                                        std::span<const GroupMask> groups,
                                        std::span<const WeightSpec> weights,
                                        SplitRng* rng = nullptr) {
  const std::size_t n = test.n();
  for (const auto& g : groups) {
    if (g.flags.size() != n) {
      throw invalid_input_error("evaluate_coverage: group mask length != n");
    }
  }
  for (const auto& w : weights) {
    if (w.u.size() != test.dim()) {
      throw invalid_input_error("evaluate_coverage: weight dimension != d");
    }
  }

  std::vector<std::uint8_t> hit(n, 0);
  if (rule.kind == RuleKind::grid_full_conformal) {
    // one evaluator for the whole sweep; per-point covers() would refit the
    // base vertex n times over
    FullConformalEvaluator ev(*rule.sample, Level(rule.alpha_fitted));
    for (std::size_t i = 0; i < n; ++i) {
      hit[i] = ev.covers(test.row(i), test.score(i)) ? 1 : 0;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      hit[i] = covers(rule, test.row(i), test.score(i), rng) ? 1 : 0;
    }
  }

  CoverageReport report;
  report.n_test = n;
  for (auto h : hit) report.covered += h;
  report.marginal_rate =
      static_cast<double>(report.covered) / static_cast<double>(n);

  for (const auto& g : groups) {
    GroupCoverageRow row;
    row.name = g.name;
    for (std::size_t i = 0; i < n; ++i) {
      if (g.flags[i]) {
        ++row.count;
        row.covered += hit[i];
      }
    }
    if (row.count == 0) {
      row.empty = true;  // flagged, not fatal
    } else {
      row.rate =
          static_cast<double>(row.covered) / static_cast<double>(row.count);
    }
    report.per_group.push_back(std::move(row));
  }

  const double target = 1.0 - rule.alpha_desired;
  for (const auto& w : weights) {
    WeightCoverageRow row;
    row.u = w.u;
    detail::KahanSum gap, mean;
    for (std::size_t i = 0; i < n; ++i) {
      auto phi_i = test.row(i);
      double wx = 0.0;
      for (std::size_t j = 0; j < w.u.size(); ++j) wx += w.u[j] * phi_i[j];
      if (w.nonnegative && wx < -1e-12) {
        throw invalid_input_error(
            "evaluate_coverage: weight asserted nonnegative is negative at a "
            "test point");
      }
      gap.add(wx * (static_cast<double>(hit[i]) - target));
      mean.add(wx);
      row.max_abs_weight = std::max(row.max_abs_weight, std::abs(wx));
    }
    row.weighted_gap = gap.value() / static_cast<double>(n);
    row.mean_weight = mean.value() / static_cast<double>(n);
    report.per_weight.push_back(std::move(row));
  }
  return report;
}

}  // namespace splitconf
