#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "splitconf/bounds.hpp"
#include "splitconf/conformal.hpp"
#include "splitconf/coverage.hpp"
#include "splitconf/csv.hpp"
#include "splitconf/full_conformal.hpp"
#include "splitconf/quantile_regression.hpp"
#include "splitconf/rng.hpp"
#include "splitconf/synthetic.hpp"

namespace splitconf {

// ---------------------------------------------------------------------
// Worker pool: deterministic results regardless of thread count, because
// every cell derives its RNG stream from (seed, cell index) and writes to
// its own slot.
// ---------------------------------------------------------------------

namespace detail {

inline void parallel_for(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& body) {
  if (count == 0) return;
  if (threads == 0) threads = std::thread::hardware_concurrency();
  if (threads == 0) threads = 1;
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::mutex& log_mutex() {
  static std::mutex mu;
  return mu;
}

inline void log_line(const std::string& msg) {
  std::lock_guard<std::mutex> lock(log_mutex());
  std::cerr << msg << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------
// Experiment configuration and records
// ---------------------------------------------------------------------

enum class ExperimentKind : std::uint8_t {
  gaussian_linreg,
  sinusoid,
  slices,
  bound_verify,
};

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "gaussian-linreg") return ExperimentKind::gaussian_linreg;
  if (s == "sinusoid") return ExperimentKind::sinusoid;
  if (s == "slices") return ExperimentKind::slices;
  if (s == "bound-verify") return ExperimentKind::bound_verify;
  throw invalid_input_error("unknown experiment '" + s + "'");
}

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::gaussian_linreg: return "gaussian-linreg";
    case ExperimentKind::sinusoid: return "sinusoid";
    case ExperimentKind::slices: return "slices";
    case ExperimentKind::bound_verify: return "bound-verify";
  }
  return "?";
}

struct MethodSpec {
  std::string name;  // static | adaptive | two-sided | full-grid
  CorrectionKind correction = CorrectionKind::none;

  std::string label() const {
    if (name == "adaptive" || name == "two-sided") {
      return name + ":" + to_string(correction);
    }
    return name;
  }
};

// Parses "adaptive", "adaptive:scaling", "two-sided:naive", ...; the bare
// form takes the config-level default correction.
inline MethodSpec parse_method_spec(const std::string& token,
                                    CorrectionKind default_corr) {
  MethodSpec m;
  const auto colon = token.find(':');
  m.name = token.substr(0, colon);
  if (m.name != "static" && m.name != "adaptive" && m.name != "two-sided" &&
      m.name != "full-grid") {
    throw invalid_input_error("unknown method '" + token + "'");
  }
  if (colon == std::string::npos) {
    m.correction = default_corr;
  } else {
    const std::string corr = token.substr(colon + 1);
    if (corr == "none") m.correction = CorrectionKind::none;
    else if (corr == "naive") m.correction = CorrectionKind::naive;
    else if (corr == "scaling") m.correction = CorrectionKind::scaling;
    else throw invalid_input_error("unknown correction '" + corr + "'");
  }
  return m;
}

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::gaussian_linreg;
  std::size_t trials = 100;
  double alpha_des = 0.1;
  CorrectionKind correction = CorrectionKind::none;
  std::vector<MethodSpec> methods;
  std::uint64_t seed = 1;
  std::string output_path;
  std::size_t threads = 0;
  double tol = 1e-9;

  GaussianLinregConfig gauss;
  std::vector<std::size_t> gauss_nval_grid = {40, 100, 200, 400, 800};
  SinusoidConfig sinusoid;
  std::vector<std::size_t> sinusoid_nval_grid = {100, 800};
  SliceConfig slice;

  std::size_t width_subsample = 16;  // test points for full-grid widths
  std::size_t width_grid_points = 128;

  void validate() const {
    if (trials < 1) throw invalid_input_error("config: trials must be >= 1");
    if (methods.empty()) {
      throw invalid_input_error("config: at least one method required");
    }
    Level check(alpha_des);
    (void)check;
  }
};

struct TrialRecord {
  std::size_t trial = 0;
  std::string method;
  std::string group;
  std::size_t n_val = 0;
  std::size_t covered = 0;
  std::size_t total = 0;
  double rate = 0.0;
  double width_mean = 0.0;
  double width_median = 0.0;
  double fit_millis = 0.0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lo + hi);
  }
  return hi;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  SplitRng rng = SplitRng(seed).split(tag);
  return rng.next_u64();
}

class StopWatch {
 public:
  StopWatch() : start_(std::chrono::steady_clock::now()) {}
  double millis() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Per-group / marginal records from a hit mask.
inline void append_group_records(
    std::vector<TrialRecord>& out, std::size_t trial, const std::string& method,
    std::size_t n_val, const std::vector<std::uint8_t>& hits,
    const std::vector<std::string>& group_names,
    const std::vector<const std::vector<std::uint8_t>*>& group_flags,
    double width_mean, double width_median, double fit_millis) {
  TrialRecord marginal;
  marginal.trial = trial;
  marginal.method = method;
  marginal.group = "marginal";
  marginal.n_val = n_val;
  marginal.total = hits.size();
  for (auto h : hits) marginal.covered += h;
  marginal.rate = static_cast<double>(marginal.covered) /
                  static_cast<double>(marginal.total);
  marginal.width_mean = width_mean;
  marginal.width_median = width_median;
  marginal.fit_millis = fit_millis;
  out.push_back(marginal);

  for (std::size_t g = 0; g < group_names.size(); ++g) {
    TrialRecord rec;
    rec.trial = trial;
    rec.method = method;
    rec.group = group_names[g];
    rec.n_val = n_val;
    rec.fit_millis = 0.0;
    const auto& flags = *group_flags[g];
    for (std::size_t i = 0; i < hits.size(); ++i) {
      if (flags[i]) {
        ++rec.total;
        rec.covered += hits[i];
      }
    }
    rec.rate = rec.total > 0 ? static_cast<double>(rec.covered) /
                                   static_cast<double>(rec.total)
                             : std::numeric_limits<double>::quiet_NaN();
    rec.width_mean = width_mean;
    rec.width_median = width_median;
    out.push_back(rec);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------
// Experiment cells
// ---------------------------------------------------------------------

namespace detail {

inline std::vector<TrialRecord> run_gaussian_cell(const ExperimentConfig& cfg,
                                                  std::size_t n_val,
                                                  std::size_t nv_index,
                                                  std::size_t trial) {
  GaussianLinregConfig gc = cfg.gauss;
  gc.n_val = n_val;
  gc.seed = derive_seed(cfg.seed, 0x67617573u + nv_index);
  gc.trial = trial;
  const GaussianLinregData data = gen_gaussian_linreg(gc);

  const Predictor f = fit_least_squares(data.train);
  const std::vector<double> val_scores = absolute_residual_scores(data.val, f);
  const std::vector<double> test_scores =
      absolute_residual_scores(data.test, f);

  const FeatureMap map = sign_indicator_map(gc.d);
  std::optional<CalibrationSample> val_sample;
  std::vector<double> test_phi(data.test.n * map.dim);
  for (std::size_t i = 0; i < data.test.n; ++i) {
    map.apply(data.test.row(i),
              std::span<double>(test_phi.data() + i * map.dim, map.dim));
  }

  const Level alpha(cfg.alpha_des);
  std::vector<TrialRecord> out;

  for (const MethodSpec& method : cfg.methods) {
    StopWatch watch;
    std::vector<std::uint8_t> hits(data.test.n, 0);
    double width_mean = 0.0, width_median = 0.0;

    if (method.name == "static") {
      const ConfidenceRule rule = calibrate_static(val_scores, alpha, true);
      for (std::size_t i = 0; i < data.test.n; ++i) {
        hits[i] = test_scores[i] <= *rule.tau ? 1 : 0;
      }
      width_mean = width_median = 2.0 * std::max(*rule.tau, 0.0);
    } else if (method.name == "adaptive" || method.name == "full-grid") {
      if (!val_sample.has_value()) {
        val_sample = CalibrationSample::from_raw(map, data.val.x, gc.d,
                                                 val_scores);
      }
      if (method.name == "adaptive") {
        const CorrectionPolicy policy{method.correction, map.dim, n_val};
        ConfidenceRule rule;
        try {
          rule = calibrate_adaptive(*val_sample, alpha, policy, {}, cfg.tol);
        } catch (const infeasible_correction_error& e) {
          log_line("[skip] trial " + std::to_string(trial) + " n_val " +
                   std::to_string(n_val) + " " + method.label() + ": " +
                   e.what());
          continue;
        }
        std::vector<double> widths(data.test.n);
        for (std::size_t i = 0; i < data.test.n; ++i) {
          std::span<const double> phi(test_phi.data() + i * map.dim, map.dim);
          hits[i] = covers(rule, phi, test_scores[i]) ? 1 : 0;
          widths[i] = interval_width(rule, phi);
        }
        for (double w : widths) width_mean += w;
        width_mean /= static_cast<double>(widths.size());
        width_median = median_of(std::move(widths));
      } else {
        auto shared = std::make_shared<CalibrationSample>(*val_sample);
        FullConformalEvaluator ev(*shared, alpha);
        for (std::size_t i = 0; i < data.test.n; ++i) {
          std::span<const double> phi(test_phi.data() + i * map.dim, map.dim);
          hits[i] = ev.covers(phi, test_scores[i]) ? 1 : 0;
        }
        width_mean = width_median = std::numeric_limits<double>::quiet_NaN();
      }
    } else {
      throw invalid_input_error("gaussian-linreg does not support method '" +
                                method.name + "'");
    }

    append_group_records(out, trial, method.label(), n_val, hits, {}, {},
                         width_mean, width_median, watch.millis());
  }
  return out;
}

inline std::vector<TrialRecord> run_sinusoid_cell(const ExperimentConfig& cfg,
                                                  std::size_t n_val,
                                                  std::size_t nv_index,
                                                  std::size_t trial) {
  SinusoidConfig sc = cfg.sinusoid;
  sc.n_val = n_val;
  sc.seed = derive_seed(cfg.seed, 0x73696e75u + nv_index);
  sc.trial = trial;
  const SinusoidData data = gen_sinusoid(sc);

  const std::size_t k = sc.k;
  const FeatureMap map = group_indicator_map(
      "bins-" + std::to_string(k), k,
      [k](std::span<const double> x) {
        auto bin = static_cast<long>(std::floor(x[0] * static_cast<double>(k)));
        if (bin < 0) bin = 0;
        if (bin >= static_cast<long>(k)) bin = static_cast<long>(k) - 1;
        return static_cast<std::size_t>(bin);
      },
      /*include_bias=*/true);

  const CalibrationSample val_sample =
      CalibrationSample::from_raw(map, data.val.x, 1, data.val.y);

  std::vector<double> test_phi(data.test.n * map.dim);
  for (std::size_t i = 0; i < data.test.n; ++i) {
    map.apply(data.test.row(i),
              std::span<double>(test_phi.data() + i * map.dim, map.dim));
  }

  std::vector<std::string> group_names;
  std::vector<std::vector<std::uint8_t>> group_flags;
  for (std::size_t b = 0; b < k; ++b) {
    group_names.push_back("bin" + std::to_string(b));
    std::vector<std::uint8_t> flags(data.test.n, 0);
    for (std::size_t i = 0; i < data.test.n; ++i) {
      flags[i] = data.test.label[i] == static_cast<int>(b) ? 1 : 0;
    }
    group_flags.push_back(std::move(flags));
  }
  std::vector<const std::vector<std::uint8_t>*> group_ptrs;
  for (const auto& f : group_flags) group_ptrs.push_back(&f);

  const Level alpha(cfg.alpha_des);
  std::vector<TrialRecord> out;

  for (const MethodSpec& method : cfg.methods) {
    StopWatch watch;
    std::vector<std::uint8_t> hits(data.test.n, 0);
    double width_mean = 0.0, width_median = 0.0;

    if (method.name == "two-sided") {
      const CorrectionPolicy policy{method.correction, map.dim, n_val};
      ConfidenceRule rule;
      try {
        rule = calibrate_two_sided(val_sample, alpha, policy, cfg.tol);
      } catch (const infeasible_correction_error& e) {
        log_line("[skip] trial " + std::to_string(trial) + " n_val " +
                 std::to_string(n_val) + " " + method.label() + ": " +
                 e.what());
        continue;
      }
      std::vector<double> widths(data.test.n);
      for (std::size_t i = 0; i < data.test.n; ++i) {
        std::span<const double> phi(test_phi.data() + i * map.dim, map.dim);
        hits[i] = covers(rule, phi, data.test.y[i]) ? 1 : 0;
        widths[i] = interval_width(rule, phi);
      }
      for (double w : widths) width_mean += w;
      width_mean /= static_cast<double>(widths.size());
      width_median = median_of(std::move(widths));
    } else if (method.name == "full-grid") {
      // two one-sided full conformal refits per test point at level
      // alpha/2: upper on the raw responses, lower on the negated ones
      const Level half(cfg.alpha_des / 2.0);
      std::vector<double> neg(val_sample.scores().begin(),
                              val_sample.scores().end());
      for (double& v : neg) v = -v;
      const CalibrationSample neg_sample = val_sample.with_scores(neg);

      FullConformalEvaluator upper(val_sample, half);
      FullConformalEvaluator lower(neg_sample, half);
      for (std::size_t i = 0; i < data.test.n; ++i) {
        std::span<const double> phi(test_phi.data() + i * map.dim, map.dim);
        const double y = data.test.y[i];
        hits[i] = upper.covers(phi, y) && lower.covers(phi, -y) ? 1 : 0;
      }

      // widths on a subsample via the candidate grid
      const std::size_t m = std::min(cfg.width_subsample, data.test.n);
      if (m > 0) {
        const GridSpec up_grid = GridSpec::spanning_scores(
            val_sample.scores(), cfg.width_grid_points);
        const GridSpec lo_grid =
            GridSpec::spanning_scores(neg_sample.scores(),
                                      cfg.width_grid_points);
        std::vector<double> widths;
        for (std::size_t s = 0; s < m; ++s) {
          const std::size_t i = s * data.test.n / m;
          std::span<const double> phi(test_phi.data() + i * map.dim, map.dim);
          std::optional<double> up_bound, lo_bound;
          double best_up = 0.0;
          bool any_up = false;
          for (std::size_t g = 0; g < up_grid.num_points; ++g) {
            const double t = up_grid.point(g);
            if (upper.covers(phi, t, WarmMode::chained)) {
              best_up = t;
              any_up = true;
            }
          }
          if (any_up) up_bound = best_up;
          double best_lo = 0.0;
          bool any_lo = false;
          for (std::size_t g = 0; g < lo_grid.num_points; ++g) {
            const double t = lo_grid.point(g);
            if (lower.covers(phi, t, WarmMode::chained)) {
              best_lo = t;
              any_lo = true;
            }
          }
          if (any_lo) lo_bound = -best_lo;
          if (up_bound && lo_bound) {
            widths.push_back(std::max(*up_bound - *lo_bound, 0.0));
          }
        }
        if (!widths.empty()) {
          for (double w : widths) width_mean += w;
          width_mean /= static_cast<double>(widths.size());
          width_median = median_of(std::move(widths));
        }
      }
    } else {
      throw invalid_input_error("sinusoid does not support method '" +
                                method.name + "'");
    }

    append_group_records(out, trial, method.label(), n_val, hits, group_names,
                         group_ptrs, width_mean, width_median, watch.millis());
  }
  return out;
}

inline std::vector<TrialRecord> run_slices_cell(const ExperimentConfig& cfg,
                                                std::size_t trial) {
  SliceConfig sc = cfg.slice;
  sc.seed = cfg.seed;
  sc.trial = trial;
  const SliceData data = gen_slice_data(sc);

  const SliceGroups slices =
      gen_slices(data.test.x, data.test.n, sc.d, sc);

  // phi(x) = (1, W^T x) with the same W that defines the slices
  const std::size_t dim = sc.d0 + 1;
  auto project = [&](std::span<const double> x, std::span<double> out) {
    out[0] = 1.0;
    for (std::size_t j = 0; j < sc.d0; ++j) {
      const double* wj = slices.w.data() + j * sc.d;
      double acc = 0.0;
      for (std::size_t a = 0; a < sc.d; ++a) acc += wj[a] * x[a];
      out[j + 1] = acc;
    }
  };

  std::vector<double> val_scores(data.val.n), test_scores(data.test.n);
  for (std::size_t i = 0; i < data.val.n; ++i) {
    val_scores[i] = data.score(data.val.row(i), data.val.label[i]);
  }
  for (std::size_t i = 0; i < data.test.n; ++i) {
    test_scores[i] = data.score(data.test.row(i), data.test.label[i]);
  }

  std::vector<double> val_phi(data.val.n * dim), test_phi(data.test.n * dim);
  for (std::size_t i = 0; i < data.val.n; ++i) {
    project(data.val.row(i), {val_phi.data() + i * dim, dim});
  }
  for (std::size_t i = 0; i < data.test.n; ++i) {
    project(data.test.row(i), {test_phi.data() + i * dim, dim});
  }
  const CalibrationSample val_sample(val_phi, val_scores, dim,
                                     "slice-projection");

  std::vector<const std::vector<std::uint8_t>*> group_ptrs;
  for (const auto& f : slices.flags) group_ptrs.push_back(&f);

  const Level alpha(cfg.alpha_des);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<TrialRecord> out;

  for (const MethodSpec& method : cfg.methods) {
    StopWatch watch;
    std::vector<std::uint8_t> hits(data.test.n, 0);

    if (method.name == "static") {
      const ConfidenceRule rule = calibrate_static(val_scores, alpha, true);
      for (std::size_t i = 0; i < data.test.n; ++i) {
        hits[i] = test_scores[i] <= *rule.tau ? 1 : 0;
      }
    } else if (method.name == "adaptive") {
      const CorrectionPolicy policy{method.correction, dim, data.val.n};
      ConfidenceRule rule;
      try {
        rule = calibrate_adaptive(val_sample, alpha, policy, {}, cfg.tol);
      } catch (const infeasible_correction_error& e) {
        log_line("[skip] repeat " + std::to_string(trial) + " " +
                 method.label() + ": " + e.what());
        continue;
      }
      for (std::size_t i = 0; i < data.test.n; ++i) {
        std::span<const double> phi(test_phi.data() + i * dim, dim);
        hits[i] = covers(rule, phi, test_scores[i]) ? 1 : 0;
      }
    } else if (method.name == "full-grid") {
      FullConformalEvaluator ev(val_sample, alpha);
      for (std::size_t i = 0; i < data.test.n; ++i) {
        std::span<const double> phi(test_phi.data() + i * dim, dim);
        hits[i] = ev.covers(phi, test_scores[i]) ? 1 : 0;
      }
    } else {
      throw invalid_input_error("slices does not support method '" +
                                method.name + "'");
    }

    append_group_records(out, trial, method.label(), data.val.n, hits,
                         slices.names, group_ptrs, nan, nan, watch.millis());
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------
// Bound verification with exact-CDF oracles
// ---------------------------------------------------------------------

enum class VerifyKind : std::uint8_t {
  prop2,
  prop3,
  corollary1,
  corollary3,
  lemma8,
};

inline VerifyKind verify_kind_from_string(const std::string& s) {
  if (s == "prop2") return VerifyKind::prop2;
  if (s == "prop3") return VerifyKind::prop3;
  if (s == "corollary1") return VerifyKind::corollary1;
  if (s == "corollary3") return VerifyKind::corollary3;
  if (s == "lemma8") return VerifyKind::lemma8;
  throw invalid_input_error("unknown verification kind '" + s + "'");
}

inline const char* to_string(VerifyKind k) {
  switch (k) {
    case VerifyKind::prop2: return "prop2";
    case VerifyKind::prop3: return "prop3";
    case VerifyKind::corollary1: return "corollary1";
    case VerifyKind::corollary3: return "corollary3";
    case VerifyKind::lemma8: return "lemma8";
  }
  return "?";
}

struct VerifyConfig {
  VerifyKind kind = VerifyKind::prop2;
  std::size_t trials = 2000;
  std::size_t n = 1000;
  double alpha = 0.1;
  double gamma = 0.05;   // prop2 / corollary1 slack
  double delta = 0.05;   // prop3 failure probability
  double t = 0.05;       // corollary3 tail parameter
  std::size_t d = 4;     // corollary3 group count
  bool two_sided = false;  // prop3: count violations of both sides
  std::uint64_t seed = 7;
  std::size_t threads = 0;
};

struct VerifyVerdict {
  double violation_rate = 0.0;
  double nominal_rate = 0.0;
  double threshold = 0.0;  // nominal + 3 sqrt(nominal(1-nominal)/trials)
  bool pass = false;
  std::size_t violations = 0;
  std::size_t trials = 0;
};

// Random quantile-regression instance used by the per-fit exact identities
// (weighted miscoverage, interpolation count, KKT residuals).  Scores are
// continuous and jittered, so the distinct-score identities apply.
struct RandomFitCase {
  CalibrationSample sample;
  QuantileFit fit;
};

inline RandomFitCase make_random_fit(std::uint64_t seed, std::size_t index,
                                     double tol = 1e-9) {
  SplitRng rng = SplitRng(seed).split(0x66697473u).split(index);
  const std::size_t d = 1 + rng.next_u64() % 10;
  const std::size_t n = 50 + rng.next_u64() % 451;
  const double alpha = rng.uniform(0.05, 0.30);
  const bool sign_map = d >= 2 && rng.bernoulli(0.5);

  std::vector<double> phi(n * d);
  std::vector<double> scores(n);
  if (sign_map) {
    // bias + (d-1) sign indicators of gaussian coordinates
    for (std::size_t i = 0; i < n; ++i) {
      phi[i * d] = 1.0;
      double shift = 0.0;
      for (std::size_t j = 1; j < d; ++j) {
        const double x = rng.normal();
        phi[i * d + j] = x > 0.0 ? 1.0 : 0.0;
        shift += phi[i * d + j];
      }
      scores[i] = (1.0 + 0.3 * shift) * std::abs(rng.normal()) +
                  0.2 * rng.uniform01();
    }
  } else {
    // partition of d groups with group-dependent exponential scales
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t g = rng.next_u64() % d;
      for (std::size_t j = 0; j < d; ++j) phi[i * d + j] = j == g ? 1.0 : 0.0;
      scores[i] = rng.exponential(1.0 / (1.0 + static_cast<double>(g)));
    }
  }

  const JitterSpec jitter(default_jitter_scale(scores),
                          rng.next_u64());
  CalibrationSample sample(std::move(phi), jitter_scores(scores, jitter), d,
                           sign_map ? "sign" : "partition");
  QuantileFit fit = fit_quantile_regression(sample, Level(alpha), tol);
  return RandomFitCase{std::move(sample), std::move(fit)};
}

// Nonnegative test directions for the weighted identities: coordinate
// vectors, the all-ones vector, and random nonnegative combinations.
inline std::vector<std::vector<double>> nonnegative_directions(
    std::size_t d, SplitRng& rng, std::size_t extra = 20) {
  std::vector<std::vector<double>> dirs;
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> u(d, 0.0);
    u[j] = 1.0;
    dirs.push_back(std::move(u));
  }
  dirs.emplace_back(d, 1.0);
  for (std::size_t r = 0; r < extra; ++r) {
    std::vector<double> u(d);
    for (double& v : u) v = rng.uniform01();
    dirs.push_back(std::move(u));
  }
  return dirs;
}

// Both claims of the empirical weighted-coverage identity for one fit and
// one direction (whose weights must be nonnegative on the sample):
//   (1/n) sum <u,phi_i> 1{S_i > h(X_i)}  <=  alpha (1/n) sum <u,phi_i> + slack
//   and, with distinct scores,          >=  ... - b_phi(u) d/n - slack.
struct WeightedIdentityCheck {
  double lhs = 0.0;
  double upper = 0.0;
  double lower = 0.0;
  bool upper_ok = false;
  bool lower_ok = false;
};

inline WeightedIdentityCheck check_weighted_identity(
    const RandomFitCase& fc, std::span<const double> u, double slack = 1e-8) {
  const auto& sample = fc.sample;
  const std::size_t n = sample.n();
  double lhs = 0.0, mean_w = 0.0, bu = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto phi_i = sample.row(i);
    double w = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) w += u[j] * phi_i[j];
    mean_w += w;
    bu = std::max(bu, std::abs(w));
    // interpolated points satisfy S_i = h(X_i) exactly in exact arithmetic;
    // the band keeps their rounding noise out of the strict indicator
    const double band = fc.fit.tol * (1.0 + std::abs(sample.score(i)));
    if (sample.score(i) > fc.fit.fitted(phi_i) + band) lhs += w;
  }
  lhs /= static_cast<double>(n);
  mean_w /= static_cast<double>(n);

  WeightedIdentityCheck out;
  out.lhs = lhs;
  out.upper = fc.fit.alpha * mean_w + slack;
  out.lower = fc.fit.alpha * mean_w -
              bu * static_cast<double>(sample.dim()) /
                  static_cast<double>(n) -
              slack;
  out.upper_ok = lhs <= out.upper;
  out.lower_ok = lhs >= out.lower;
  return out;
}

namespace detail {

// Exact conditional coverage of the static empirical-quantile rule under
// Uniform(0,1) scores: F(tau) = clamp(tau, 0, 1), no test-set noise.
inline double exact_uniform_coverage(std::size_t n, double beta,
                                     SplitRng& rng) {
  std::vector<double> scores(n);
  for (double& s : scores) s = rng.uniform01();
  const double tau = empirical_quantile(scores, beta);
  return std::clamp(tau, 0.0, 1.0);
}

// Per-group exact coverage of the adaptive partition rule with score | g ~
// Uniform(0, 1 + g): F_g(theta_g) = clamp(theta_g / (1+g), 0, 1).
inline std::vector<double> exact_partition_group_coverages(
    std::size_t n, std::size_t d, Level alpha, SplitRng& rng, double tol) {
  std::vector<double> phi(n * d, 0.0);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = rng.next_u64() % d;
    phi[i * d + g] = 1.0;
    scores[i] = rng.uniform(0.0, 1.0 + static_cast<double>(g));
  }
  const CalibrationSample sample(std::move(phi), std::move(scores), d,
                                 "partition");
  const QuantileFit fit = fit_quantile_regression(sample, alpha, tol);
  std::vector<double> cov(d);
  for (std::size_t g = 0; g < d; ++g) {
    cov[g] = std::clamp(fit.theta[g] / (1.0 + static_cast<double>(g)), 0.0,
                        1.0);
  }
  return cov;
}

}  // namespace detail

// Monte Carlo check of a stated finite-sample bound against an exact-CDF
// oracle: the conditional coverage of each trial's rule is computed in
// closed form, so the violation count carries no test-set noise.  Passes
// when the violation rate is at most nominal + 3 binomial sigmas (lemma8
// demands exactly zero violations).
inline VerifyVerdict verify_bound(const VerifyConfig& cfg) {
  VerifyVerdict verdict;
  verdict.trials = cfg.trials;
  const Level alpha(cfg.alpha);

  std::vector<std::uint8_t> violated(cfg.trials, 0);
  switch (cfg.kind) {
    case VerifyKind::prop2: {
      verdict.nominal_rate = hoeffding_failure_prob(cfg.n, cfg.gamma);
      detail::parallel_for(cfg.trials, cfg.threads, [&](std::size_t tr) {
        SplitRng rng = SplitRng(cfg.seed).split(tr);
        const double cov =
            detail::exact_uniform_coverage(cfg.n, 1.0 - cfg.alpha, rng);
        violated[tr] = cov < 1.0 - cfg.alpha - cfg.gamma ? 1 : 0;
      });
      break;
    }
    case VerifyKind::prop3: {
      const double gamma = bernstein_gamma(cfg.n, cfg.alpha, cfg.delta).gamma;
      verdict.nominal_rate = cfg.two_sided ? 2.0 * cfg.delta : cfg.delta;
      detail::parallel_for(cfg.trials, cfg.threads, [&](std::size_t tr) {
        SplitRng rng = SplitRng(cfg.seed).split(tr);
        const double cov =
            detail::exact_uniform_coverage(cfg.n, 1.0 - cfg.alpha, rng);
        bool bad = cov < 1.0 - cfg.alpha - gamma;
        if (cfg.two_sided) bad = bad || cov > 1.0 - cfg.alpha + gamma;
        violated[tr] = bad ? 1 : 0;
      });
      break;
    }
    case VerifyKind::corollary1: {
      verdict.nominal_rate = 2.0 * hoeffding_failure_prob(cfg.n, cfg.gamma);
      const double inv_n = 1.0 / static_cast<double>(cfg.n);
      detail::parallel_for(cfg.trials, cfg.threads, [&](std::size_t tr) {
        SplitRng rng = SplitRng(cfg.seed).split(tr);
        const double cov =
            detail::exact_uniform_coverage(cfg.n, 1.0 - cfg.alpha, rng);
        violated[tr] = (cov < 1.0 - cfg.alpha - cfg.gamma ||
                        cov > 1.0 - cfg.alpha + inv_n + cfg.gamma)
                           ? 1
                           : 0;
      });
      break;
    }
    case VerifyKind::corollary3: {
      verdict.nominal_rate = std::exp(-static_cast<double>(cfg.n) * cfg.t *
                                      cfg.t);
      const double mass = 1.0 / static_cast<double>(cfg.d);
      const double dev =
          group_coverage_deviation(cfg.n, cfg.d, cfg.t, mass);
      detail::parallel_for(cfg.trials, cfg.threads, [&](std::size_t tr) {
        SplitRng rng = SplitRng(cfg.seed).split(tr);
        const auto cov = detail::exact_partition_group_coverages(
            cfg.n, cfg.d, alpha, rng, 1e-9);
        bool bad = false;
        for (double c : cov) {
          if (c < 1.0 - cfg.alpha - dev) bad = true;
        }
        violated[tr] = bad ? 1 : 0;
      });
      break;
    }
    case VerifyKind::lemma8: {
      verdict.nominal_rate = 0.0;
      detail::parallel_for(cfg.trials, cfg.threads, [&](std::size_t tr) {
        const RandomFitCase fc = make_random_fit(cfg.seed, tr);
        SplitRng dir_rng = SplitRng(cfg.seed).split(0x64697273u).split(tr);
        const auto dirs = nonnegative_directions(fc.sample.dim(), dir_rng);
        bool bad = false;
        for (const auto& u : dirs) {
          const auto check = check_weighted_identity(fc, u);
          if (!check.upper_ok || !check.lower_ok) bad = true;
        }
        violated[tr] = bad ? 1 : 0;
      });
      break;
    }
  }

  for (auto v : violated) verdict.violations += v;
  verdict.violation_rate = static_cast<double>(verdict.violations) /
                           static_cast<double>(cfg.trials);
  if (cfg.kind == VerifyKind::lemma8) {
    verdict.threshold = 0.0;
    verdict.pass = verdict.violations == 0;
  } else {
    const double p = verdict.nominal_rate;
    verdict.threshold =
        p + 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(cfg.trials));
    verdict.pass = verdict.violation_rate <= verdict.threshold;
  }
  return verdict;
}

// Pooled |group coverage - (1-alpha)| samples for the partition setting
// with exact per-group CDFs: trials x d values, no test-set noise.  Used to
// check the sqrt(n) decay of group-conditional deviations.
inline std::vector<double> partition_deviation_samples(
    std::size_t n, std::size_t d, Level alpha, std::size_t trials,
    std::uint64_t seed, std::size_t threads = 0) {
  std::vector<double> devs(trials * d, 0.0);
  detail::parallel_for(trials, threads, [&](std::size_t tr) {
    SplitRng rng = SplitRng(seed).split(tr);
    const auto cov =
        detail::exact_partition_group_coverages(n, d, alpha, rng, 1e-9);
    for (std::size_t g = 0; g < d; ++g) {
      devs[tr * d + g] = std::abs(cov[g] - (1.0 - alpha.alpha()));
    }
  });
  return devs;
}

// Mean exact conditional coverage of the static rule with Uniform(0,1)
// scores over many trials, plus the Monte Carlo standard error of the mean.
struct MarginalExactness {
  double mean_coverage = 0.0;
  double mc_sigma = 0.0;
};

inline MarginalExactness mean_exact_coverage_uniform(
    std::size_t n, Level alpha, std::size_t trials, std::uint64_t seed,
    bool enlarged, std::size_t threads = 0) {
  std::vector<double> cov(trials);
  detail::parallel_for(trials, threads, [&](std::size_t tr) {
    SplitRng rng = SplitRng(seed).split(tr);
    std::vector<double> scores(n);
    for (double& s : scores) s = rng.uniform01();
    const double tau = enlarged
                           ? enlarged_quantile(scores, alpha)
                           : empirical_quantile(scores, 1.0 - alpha.alpha());
    cov[tr] = std::clamp(tau, 0.0, 1.0);
  });
  MarginalExactness out;
  for (double c : cov) out.mean_coverage += c;
  out.mean_coverage /= static_cast<double>(trials);
  double var = 0.0;
  for (double c : cov) {
    var += (c - out.mean_coverage) * (c - out.mean_coverage);
  }
  var /= static_cast<double>(trials - 1);
  out.mc_sigma = std::sqrt(var / static_cast<double>(trials));
  return out;
}

// ---------------------------------------------------------------------
// run_experiment and result emission
// ---------------------------------------------------------------------

inline std::vector<TrialRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  if (cfg.experiment == ExperimentKind::bound_verify) {
    std::vector<TrialRecord> records;
    for (VerifyKind kind : {VerifyKind::prop2, VerifyKind::prop3,
                            VerifyKind::corollary1, VerifyKind::corollary3,
                            VerifyKind::lemma8}) {
      VerifyConfig vc;
      vc.kind = kind;
      vc.trials = cfg.trials;
      vc.seed = cfg.seed;
      vc.threads = cfg.threads;
      if (kind == VerifyKind::lemma8) vc.trials = std::min(cfg.trials,
                                                           std::size_t{500});
      const VerifyVerdict v = verify_bound(vc);
      TrialRecord rec;
      rec.trial = 0;
      rec.method = to_string(kind);
      rec.group = "violations";
      rec.n_val = vc.n;
      rec.covered = v.violations;
      rec.total = v.trials;
      rec.rate = v.violation_rate;
      rec.width_mean = v.nominal_rate;
      rec.width_median = v.threshold;
      rec.fit_millis = v.pass ? 1.0 : 0.0;
      records.push_back(std::move(rec));
    }
    return records;
  }

  std::vector<std::size_t> nvals;
  switch (cfg.experiment) {
    case ExperimentKind::gaussian_linreg: nvals = cfg.gauss_nval_grid; break;
    case ExperimentKind::sinusoid: nvals = cfg.sinusoid_nval_grid; break;
    default: nvals = {cfg.slice.n_val}; break;
  }
  if (nvals.empty()) throw invalid_input_error("config: empty n_val grid");

  const std::size_t cells = nvals.size() * cfg.trials;
  std::vector<std::vector<TrialRecord>> slots(cells);
  detail::parallel_for(cells, cfg.threads, [&](std::size_t cell) {
    const std::size_t nv_index = cell / cfg.trials;
    const std::size_t trial = cell % cfg.trials;
    switch (cfg.experiment) {
      case ExperimentKind::gaussian_linreg:
        slots[cell] =
            detail::run_gaussian_cell(cfg, nvals[nv_index], nv_index, trial);
        break;
      case ExperimentKind::sinusoid:
        slots[cell] =
            detail::run_sinusoid_cell(cfg, nvals[nv_index], nv_index, trial);
        break;
      case ExperimentKind::slices:
        slots[cell] = detail::run_slices_cell(cfg, trial);
        break;
      default:
        break;
    }
  });

  std::vector<TrialRecord> records;
  for (auto& s : slots) {
    records.insert(records.end(), std::make_move_iterator(s.begin()),
                   std::make_move_iterator(s.end()));
  }
  return records;
}

// Long-format CSV, deterministic bytes for a fixed config and seed.  Wall
// times are nondeterministic, so fit_millis goes to a sidecar file and the
// write timestamp to a metadata JSON next to it.
inline void write_records_csv(const std::vector<TrialRecord>& records,
                              const std::string& path) {
  std::ostringstream main_csv;
  main_csv << "# schema_version=1\n";
  main_csv << "trial,method,group,n_val,covered,total,rate,width_mean,"
              "width_median\n";
  for (const auto& r : records) {
    main_csv << r.trial << ',' << r.method << ',' << r.group << ',' << r.n_val
             << ',' << r.covered << ',' << r.total << ','
             << format_double(r.rate) << ',' << format_double(r.width_mean)
             << ',' << format_double(r.width_median) << '\n';
  }
  atomic_write_file(path, main_csv.str());

  std::ostringstream timing_csv;
  timing_csv << "# schema_version=1\n";
  timing_csv << "trial,method,group,n_val,fit_millis\n";
  for (const auto& r : records) {
    timing_csv << r.trial << ',' << r.method << ',' << r.group << ','
               << r.n_val << ',' << format_double(r.fit_millis) << '\n';
  }
  atomic_write_file(path + ".timing.csv", timing_csv.str());

  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const auto seconds =
      std::chrono::duration_cast<std::chrono::seconds>(now).count();
  std::ostringstream meta;
  meta << "{\n  \"schema_version\": 1,\n  \"written_unix_seconds\": "
       << seconds << ",\n  \"records\": " << records.size() << "\n}\n";
  atomic_write_file(path + ".meta.json", meta.str());
}

struct SummaryRow {
  std::string method;
  std::string group;
  std::size_t n_val = 0;
  std::size_t trials = 0;
  double coverage_mean = 0.0;
  double coverage_std = 0.0;
  double width_mean_avg = 0.0;
  double width_mean_std = 0.0;
  double width_median_avg = 0.0;
};

// Per-(method, group, n_val) mean and standard deviation of rates and
// widths: the plot-ready aggregation of a result table.
inline std::vector<SummaryRow> emit_summary(
    const std::vector<TrialRecord>& records) {
  if (records.empty()) {
    throw invalid_input_error("emit_summary: empty result table");
  }
  std::vector<SummaryRow> rows;
  auto find_row = [&](const TrialRecord& r) -> SummaryRow& {
    for (auto& row : rows) {
      if (row.method == r.method && row.group == r.group &&
          row.n_val == r.n_val) {
        return row;
      }
    }
    rows.push_back(SummaryRow{r.method, r.group, r.n_val, 0, 0, 0, 0, 0, 0});
    return rows.back();
  };

  // two passes: means, then deviations
  for (const auto& r : records) {
    if (std::isnan(r.rate)) continue;
    SummaryRow& row = find_row(r);
    ++row.trials;
    row.coverage_mean += r.rate;
    if (!std::isnan(r.width_mean)) row.width_mean_avg += r.width_mean;
    if (!std::isnan(r.width_median)) row.width_median_avg += r.width_median;
  }
  for (auto& row : rows) {
    if (row.trials == 0) continue;
    const double m = static_cast<double>(row.trials);
    row.coverage_mean /= m;
    row.width_mean_avg /= m;
    row.width_median_avg /= m;
  }
  for (const auto& r : records) {
    if (std::isnan(r.rate)) continue;
    SummaryRow& row = find_row(r);
    const double dc = r.rate - row.coverage_mean;
    row.coverage_std += dc * dc;
    if (!std::isnan(r.width_mean)) {
      const double dw = r.width_mean - row.width_mean_avg;
      row.width_mean_std += dw * dw;
    }
  }
  for (auto& row : rows) {
    if (row.trials > 1) {
      row.coverage_std =
          std::sqrt(row.coverage_std / static_cast<double>(row.trials - 1));
      row.width_mean_std =
          std::sqrt(row.width_mean_std / static_cast<double>(row.trials - 1));
    } else {
      row.coverage_std = 0.0;
      row.width_mean_std = 0.0;
    }
  }
  return rows;
}

inline void write_summary_csv(const std::vector<SummaryRow>& rows,
                              const std::string& path) {
  std::ostringstream out;
  out << "# schema_version=1\n";
  out << "method,group,n_val,trials,coverage_mean,coverage_std,"
         "width_mean_avg,width_mean_std,width_median_avg\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.group << ',' << r.n_val << ',' << r.trials
        << ',' << format_double(r.coverage_mean) << ','
        << format_double(r.coverage_std) << ','
        << format_double(r.width_mean_avg) << ','
        << format_double(r.width_mean_std) << ','
        << format_double(r.width_median_avg) << '\n';
  }
  atomic_write_file(path, out.str());
}

}  // namespace splitconf
