// Acceptance suite: every shipped guarantee is checked end to end at fixed
// tolerances, one pass/fail line per criterion.  Run all (no args) or a
// subset by number: ./splitconf_acceptance 5 6 7
//
// Monte Carlo checks use exact-CDF oracles (conditional coverage computed
// from a known score distribution), so violation counting carries no
// test-set noise.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "naive_full_conformal.hpp"
#include "splitconf/splitconf.hpp"

namespace {

using namespace splitconf;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Check {
  std::ostringstream out;
  bool pass = true;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      out << " [violated: " << what << "]";
    }
  }
  template <typename T>
  Check& operator<<(const T& v) {
    out << v;
    return *this;
  }
  Outcome done() { return {pass, out.str()}; }
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.5g", v);
  return buf;
}

double three_sigma(double p, std::size_t trials) {
  return 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

// ---- 1: marginal exactness of the enlarged split-conformal rule --------

Outcome criterion_marginal_exactness() {
  Check c;
  const std::size_t n = 100, trials = 10000;
  const auto res =
      mean_exact_coverage_uniform(n, Level(0.1), trials, 20260111, true);
  const double lo = 0.9 - 3.0 * res.mc_sigma;
  const double hi = 0.9 + 1.0 / 101.0 + 3.0 * res.mc_sigma;
  c << "mean coverage " << fmt(res.mean_coverage) << " vs [" << fmt(lo)
    << ", " << fmt(hi) << "], mc-sigma " << fmt(res.mc_sigma);
  c.require(res.mean_coverage >= lo && res.mean_coverage <= hi,
            "mean outside enlarged-quantile band");
  return c.done();
}

// ---- 2: Proposition 2 (Hoeffding sample-conditional bound) -------------

Outcome criterion_prop2() {
  Check c;
  VerifyConfig vc;
  vc.kind = VerifyKind::prop2;
  vc.n = 1000;
  vc.alpha = 0.1;
  vc.gamma = 0.05;
  vc.trials = 2000;
  vc.seed = 2;
  const auto v = verify_bound(vc);
  c << "violation rate " << fmt(v.violation_rate) << " vs nominal "
    << fmt(v.nominal_rate) << " + 3sigma = " << fmt(v.threshold);
  c.require(v.pass, "violation rate above Hoeffding bound");
  return c.done();
}

// ---- 3: Proposition 3 (Bernstein-rate slack) ---------------------------

Outcome criterion_prop3() {
  Check c;
  for (std::size_t n : {500u, 2000u}) {
    for (double alpha : {0.05, 0.1}) {
      VerifyConfig vc;
      vc.kind = VerifyKind::prop3;
      vc.n = n;
      vc.alpha = alpha;
      vc.delta = 0.05;
      vc.trials = 2000;
      vc.seed = 300 + n + static_cast<std::size_t>(alpha * 1000);
      vc.two_sided = false;
      const auto one = verify_bound(vc);
      vc.two_sided = true;
      const auto two = verify_bound(vc);
      c << "(n=" << n << ",a=" << alpha << ") one " << fmt(one.violation_rate)
        << "<=" << fmt(one.threshold) << " two " << fmt(two.violation_rate)
        << "<=" << fmt(two.threshold) << "; ";
      c.require(one.pass, "one-sided rate above delta band");
      c.require(two.pass, "two-sided rate above 2 delta band");
    }
  }
  // exact inequality gamma_n(delta) <= closed form on a 10^3 grid
  std::size_t grid_checks = 0;
  for (int i = 0; i < 10; ++i) {
    const auto n = static_cast<std::size_t>(std::pow(10.0, 1 + 0.4 * i));
    for (int j = 0; j < 10; ++j) {
      const double alpha = 0.01 + 0.98 * j / 9.0;
      for (int k = 0; k < 10; ++k) {
        const double delta = 0.002 + 0.9 * k / 9.0;
        const auto g = bernstein_gamma(n, alpha, delta);
        if (g.gamma > g.upper_bound * (1.0 + 1e-12)) {
          c.require(false, "gamma_n exceeded its closed-form upper bound");
        }
        ++grid_checks;
      }
    }
  }
  c << "gamma<=bound on " << grid_checks << " grid points";
  return c.done();
}

// ---- 4: Corollary 1 (two-sided band, distinct scores) ------------------

Outcome criterion_corollary1() {
  Check c;
  VerifyConfig vc;
  vc.kind = VerifyKind::corollary1;
  vc.n = 1000;
  vc.alpha = 0.1;
  vc.gamma = 0.05;
  vc.trials = 2000;
  vc.seed = 4;
  const auto v = verify_bound(vc);
  c << "outside-band rate " << fmt(v.violation_rate) << " vs "
    << fmt(v.nominal_rate) << " + 3sigma = " << fmt(v.threshold);
  c.require(v.pass, "band violation rate above 2 exp(-2 n gamma^2)");
  return c.done();
}

// ---- 5/6/7 share the suite of 500 random vertex fits -------------------

struct FitSuiteStats {
  std::size_t weighted_violations = 0;
  std::size_t interp_violations = 0;
  std::size_t kkt_violations = 0;
  std::size_t dual_violations = 0;
  double worst_kkt = 0.0;
  double worst_clip = 0.0;
  std::size_t fits = 0;
};

const FitSuiteStats& fit_suite() {
  static const FitSuiteStats stats = [] {
    FitSuiteStats s;
    const std::size_t count = 500;
    std::vector<FitSuiteStats> partial(count);
    detail::parallel_for(count, 0, [&](std::size_t i) {
      const RandomFitCase fc = make_random_fit(56789, i);
      FitSuiteStats& p = partial[i];
      p.fits = 1;

      SplitRng dir_rng = SplitRng(424242).split(i);
      const auto dirs = nonnegative_directions(fc.sample.dim(), dir_rng, 20);
      for (const auto& u : dirs) {
        const auto chk = check_weighted_identity(fc, u, 1e-8);
        if (!chk.upper_ok || !chk.lower_ok) ++p.weighted_violations;
      }

      if (fc.fit.interp_set.size() > fc.sample.dim()) ++p.interp_violations;

      const double kkt = kkt_residual(fc.fit, fc.sample);
      p.worst_kkt = kkt;
      p.worst_clip = fc.fit.max_eta_clip;
      if (kkt > 1e-8) ++p.kkt_violations;
      bool dual_ok = fc.fit.max_eta_clip <= 1e-10;
      for (double e : fc.fit.eta) {
        if (e < -(1.0 - fc.fit.alpha) - 1e-12 || e > fc.fit.alpha + 1e-12) {
          dual_ok = false;
        }
      }
      if (!dual_ok) ++p.dual_violations;
    });
    for (const auto& p : partial) {
      s.fits += p.fits;
      s.weighted_violations += p.weighted_violations;
      s.interp_violations += p.interp_violations;
      s.kkt_violations += p.kkt_violations;
      s.dual_violations += p.dual_violations;
      s.worst_kkt = std::max(s.worst_kkt, p.worst_kkt);
      s.worst_clip = std::max(s.worst_clip, p.worst_clip);
    }
    return s;
  }();
  return stats;
}

Outcome criterion_lemma8() {
  Check c;
  const auto& s = fit_suite();
  c << s.fits << " fits, weighted-identity violations "
    << s.weighted_violations << " (upper and distinct-score lower, slack "
    << "1e-8)";
  c.require(s.weighted_violations == 0, "weighted identity violated");
  return c.done();
}

Outcome criterion_interpolation() {
  Check c;
  const auto& s = fit_suite();
  c << s.fits << " jittered vertex fits, card(I0) > d in "
    << s.interp_violations;
  c.require(s.interp_violations == 0, "interpolation count exceeded d");
  return c.done();
}

Outcome criterion_kkt() {
  Check c;
  const auto& s = fit_suite();
  c << "worst kkt residual " << fmt(s.worst_kkt) << " (<= 1e-8), worst dual "
    << "clip " << fmt(s.worst_clip) << ", box violations "
    << s.dual_violations;
  c.require(s.kkt_violations == 0, "kkt residual above 1e-8");
  c.require(s.dual_violations == 0, "dual variable outside its box");
  return c.done();
}

// ---- 8: level corrections on the Gaussian linear model (Fig 1a) --------

Outcome criterion_corrections() {
  Check c;
  ExperimentConfig cfg;
  cfg.experiment = ExperimentKind::gaussian_linreg;
  cfg.trials = 300;
  cfg.alpha_des = 0.1;
  cfg.seed = 8080;
  cfg.methods = {parse_method_spec("adaptive:none", CorrectionKind::none),
                 parse_method_spec("adaptive:naive", CorrectionKind::none),
                 parse_method_spec("adaptive:scaling", CorrectionKind::none)};
  cfg.gauss.d = 20;
  cfg.gauss.n_train = 100;
  cfg.gauss.n_test = 1000;
  cfg.gauss_nval_grid = {40, 100, 200, 400, 800};
  const auto records = run_experiment(cfg);
  const auto summary = emit_summary(records);

  auto coverage = [&](const std::string& method,
                      std::size_t n_val) -> const SummaryRow* {
    for (const auto& row : summary) {
      if (row.method == method && row.n_val == n_val &&
          row.group == "marginal") {
        return &row;
      }
    }
    return nullptr;
  };

  for (std::size_t nv : {40u, 100u, 200u}) {
    const auto* row = coverage("adaptive:none", nv);
    c.require(row != nullptr, "missing uncorrected rows");
    if (row != nullptr) {
      c << "none@" << nv << "=" << fmt(row->coverage_mean) << " ";
      c.require(row->coverage_mean <= 0.9 - 0.01,
                "uncorrected not undercovering at n/d <= 10");
    }
  }
  std::size_t closer = 0, compared = 0;
  for (std::size_t nv : {200u, 400u, 800u}) {
    const auto* scaling = coverage("adaptive:scaling", nv);
    c.require(scaling != nullptr, "missing scaling rows");
    if (scaling == nullptr) continue;
    c << "scaling@" << nv << "=" << fmt(scaling->coverage_mean) << " ";
    c.require(std::abs(scaling->coverage_mean - 0.9) <= 0.015,
              "scaling correction off target at n/d >= 10");
    const auto* naive = coverage("adaptive:naive", nv);
    if (naive != nullptr) {
      ++compared;
      c << "naive@" << nv << "=" << fmt(naive->coverage_mean) << " ";
      if (std::abs(scaling->coverage_mean - 0.9) <
          std::abs(naive->coverage_mean - 0.9)) {
        ++closer;
      }
    }
  }
  c << "scaling closer in " << closer << "/" << compared;
  c.require(compared >= 3, "naive correction rows missing at n/d >= 10");
  c.require(closer >= 2, "scaling not closer than naive at 2 of 3 points");
  return c.done();
}

// ---- 9: split vs full conformal on the sinusoid (Fig 2) ----------------

Outcome criterion_sinusoid() {
  Check c;
  ExperimentConfig cfg;
  cfg.experiment = ExperimentKind::sinusoid;
  cfg.trials = 100;
  cfg.alpha_des = 0.1;
  cfg.seed = 909090;
  cfg.methods = {parse_method_spec("two-sided:scaling", CorrectionKind::none),
                 parse_method_spec("full-grid", CorrectionKind::none)};
  cfg.sinusoid.k = 5;
  cfg.sinusoid.n_train = 200;
  cfg.sinusoid.n_test = 500;
  cfg.sinusoid_nval_grid = {100, 800};
  cfg.width_subsample = 8;
  const auto records = run_experiment(cfg);
  const auto summary = emit_summary(records);

  auto row_of = [&](const std::string& method, const std::string& group,
                    std::size_t nv) -> const SummaryRow* {
    for (const auto& row : summary) {
      if (row.method == method && row.group == group && row.n_val == nv) {
        return &row;
      }
    }
    return nullptr;
  };

  // n_val = 800: both methods calibrated per bin
  for (const std::string method : {"two-sided:scaling", "full-grid"}) {
    for (std::size_t b = 0; b < 5; ++b) {
      const auto* row = row_of(method, "bin" + std::to_string(b), 800);
      c.require(row != nullptr, "missing bin row");
      if (row == nullptr) continue;
      const double miscoverage = 1.0 - row->coverage_mean;
      if (b == 0 || b == 4) {
        c << method[0] << "bin" << b << "@800=" << fmt(miscoverage) << " ";
      }
      c.require(miscoverage >= 0.06 && miscoverage <= 0.14,
                method + " bin miscoverage outside [0.06, 0.14] at 800");
    }
  }

  // n_val = 100: split undercovers within groups relative to full conformal
  double split_mean = 0.0, full_mean = 0.0;
  for (std::size_t b = 0; b < 5; ++b) {
    const auto* split = row_of("two-sided:scaling", "bin" + std::to_string(b),
                               100);
    const auto* full = row_of("full-grid", "bin" + std::to_string(b), 100);
    c.require(split != nullptr && full != nullptr, "missing rows at 100");
    if (split == nullptr || full == nullptr) continue;
    split_mean += (1.0 - split->coverage_mean) / 5.0;
    full_mean += (1.0 - full->coverage_mean) / 5.0;
  }
  c << "per-bin miscoverage@100 split " << fmt(split_mean) << " vs full "
    << fmt(full_mean) << "; ";
  c.require(split_mean > full_mean,
            "split not undercovering groups relative to full at n_val=100");

  const auto* marginal = row_of("two-sided:scaling", "marginal", 100);
  c.require(marginal != nullptr, "missing split marginal at 100");
  if (marginal != nullptr) {
    const double mm = 1.0 - marginal->coverage_mean;
    c << "split marginal miscoverage@100 " << fmt(mm);
    c.require(mm >= 0.07 && mm <= 0.13,
              "split marginal miscoverage outside [0.07, 0.13]");
  }
  return c.done();
}

// ---- 10: sqrt(n) decay of group-conditional deviations -----------------

Outcome criterion_rate() {
  Check c;
  const std::size_t trials = 300, d = 5;
  auto q90 = [](std::vector<double> v) {
    const std::size_t k = static_cast<std::size_t>(
        std::ceil(0.9 * static_cast<double>(v.size())));
    std::nth_element(v.begin(), v.begin() + (k - 1), v.end());
    return v[k - 1];
  };
  const double q_small =
      q90(partition_deviation_samples(1000, d, Level(0.1), trials, 1010));
  const double q_large =
      q90(partition_deviation_samples(4000, d, Level(0.1), trials, 1010));
  c << "q90 deviation: n=1000 -> " << fmt(q_small) << ", n=4000 -> "
    << fmt(q_large) << ", ratio " << fmt(q_large / q_small);
  c.require(q_large <= 0.6 * q_small,
            "deviation did not shrink at the sqrt(n) rate");
  return c.done();
}

// ---- 11: grid full conformal equals the naive oracle -------------------

Outcome criterion_full_conformal_oracle() {
  Check c;
  SplitRng rng(111111);
  std::size_t mismatches = 0, candidates = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 3 + rng.next_u64() % 6;  // n <= 8
    const std::size_t d = 1 + rng.next_u64() % 2;  // d <= 2
    const double alpha = rng.uniform(0.08, 0.5);
    std::vector<double> phi(n * d), scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      phi[i * d] = 1.0;
      for (std::size_t j = 1; j < d; ++j) phi[i * d + j] = rng.normal();
      scores[i] = rng.uniform(-2.0, 2.0);
    }
    const CalibrationSample sample(phi, scores, d, "dense");
    std::vector<double> phi_test(d);
    phi_test[0] = 1.0;
    for (std::size_t j = 1; j < d; ++j) phi_test[j] = rng.normal();

    const GridSpec grid = GridSpec::spanning_scores(sample.scores(), 128);
    const auto res =
        full_conformal_membership(sample, phi_test, Level(alpha), grid);
    for (std::size_t k = 0; k < grid.num_points; ++k) {
      ++candidates;
      if (!res.solved[k]) {
        ++mismatches;
        continue;
      }
      const bool oracle = splitconf_test::naive_full_conformal_accepts(
          sample, phi_test, grid.point(k), alpha);
      if (oracle != static_cast<bool>(res.accepted[k])) ++mismatches;
    }
  }
  c << candidates << " candidates across 50 instances, mismatches "
    << mismatches;
  c.require(mismatches == 0, "acceptance mask differs from naive oracle");
  return c.done();
}

// ---- 12: per-prediction cost, full grid vs fitted split ----------------

Outcome criterion_timing() {
  Check c;
  SinusoidConfig sc;
  sc.n_val = 800;
  sc.n_test = 500;
  sc.seed = 121212;
  const SinusoidData data = gen_sinusoid(sc);
  const std::size_t k = sc.k;
  const FeatureMap map = group_indicator_map(
      "bins", k,
      [k](std::span<const double> x) {
        auto bin = static_cast<long>(std::floor(x[0] * static_cast<double>(k)));
        if (bin < 0) bin = 0;
        if (bin >= static_cast<long>(k)) bin = static_cast<long>(k) - 1;
        return static_cast<std::size_t>(bin);
      },
      true);
  const CalibrationSample val =
      CalibrationSample::from_raw(map, data.val.x, 1, data.val.y);
  std::vector<double> test_phi(data.test.n * map.dim);
  for (std::size_t i = 0; i < data.test.n; ++i) {
    map.apply(data.test.row(i),
              std::span<double>(test_phi.data() + i * map.dim, map.dim));
  }

  // split: fit once, then membership is two inner products per point
  const auto rule = calibrate_two_sided(val, Level(0.1),
                                        {CorrectionKind::scaling, map.dim,
                                         val.n()});
  std::size_t sink = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < data.test.n; ++i) {
      std::span<const double> phi(test_phi.data() + i * map.dim, map.dim);
      sink += covers(rule, phi, data.test.y[i]) ? 1 : 0;
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double split_per_pred =
      std::chrono::duration<double>(t1 - t0).count() /
      static_cast<double>(reps * data.test.n);

  // full conformal: two augmented refits per prediction
  const Level half(0.05);
  std::vector<double> neg(val.scores().begin(), val.scores().end());
  for (double& v : neg) v = -v;
  const CalibrationSample neg_val = val.with_scores(neg);
  FullConformalEvaluator upper(val, half);
  FullConformalEvaluator lower(neg_val, half);
  const std::size_t m = 200;
  const auto t2 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < m; ++i) {
    std::span<const double> phi(test_phi.data() + i * map.dim, map.dim);
    const double y = data.test.y[i];
    sink += upper.covers(phi, y) && lower.covers(phi, -y) ? 1 : 0;
  }
  const auto t3 = std::chrono::steady_clock::now();
  const double full_per_pred =
      std::chrono::duration<double>(t3 - t2).count() / static_cast<double>(m);

  const double ratio = full_per_pred / split_per_pred;
  c << "split " << fmt(split_per_pred * 1e6) << " us/pred, full grid "
    << fmt(full_per_pred * 1e6) << " us/pred, ratio " << fmt(ratio)
    << " (sink " << (sink % 7) << ")";
  c.require(ratio >= 10.0, "full conformal less than 10x split cost");
  return c.done();
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria = {
      {1, "marginal-exactness", criterion_marginal_exactness},
      {2, "prop2-hoeffding", criterion_prop2},
      {3, "prop3-bernstein", criterion_prop3},
      {4, "corollary1-band", criterion_corollary1},
      {5, "lemma8-weighted-identities", criterion_lemma8},
      {6, "interpolation-card", criterion_interpolation},
      {7, "kkt-stationarity", criterion_kkt},
      {8, "fig1a-level-corrections", criterion_corrections},
      {9, "fig2-sinusoid-full-vs-split", criterion_sinusoid},
      {10, "theorem2-rate-scaling", criterion_rate},
      {11, "full-conformal-oracle", criterion_full_conformal_oracle},
      {12, "timing-direction", criterion_timing},
  };

  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  bool all_pass = true;
  for (const auto& crit : criteria) {
    if (!wanted.empty() && wanted.count(crit.id) == 0) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = crit.fn();
    } catch (const std::exception& e) {
      outcome.pass = false;
      outcome.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    std::printf("[%s] %02d %s: %s (%.1fs)\n",
                outcome.pass ? "PASS" : "FAIL", crit.id, crit.name,
                outcome.detail.c_str(), secs);
    std::fflush(stdout);
    all_pass = all_pass && outcome.pass;
  }
  return all_pass ? 0 : 1;
}
