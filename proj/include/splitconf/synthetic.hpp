#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "splitconf/csv.hpp"
#include "splitconf/errors.hpp"
#include "splitconf/feature_map.hpp"
#include "splitconf/linalg.hpp"
#include "splitconf/rng.hpp"
#include "splitconf/scores.hpp"

namespace splitconf {

// A generated split: raw features (row-major n x xdim), responses, and an
// integer label (bin index or class) where the setting defines one.
struct Dataset {
  std::size_t n = 0;
  std::size_t xdim = 0;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<int> label;

  std::span<const double> row(std::size_t i) const {
    return {x.data() + i * xdim, xdim};
  }
};

namespace detail {

// Stream tags so train/val/test never share RNG state.
enum : std::uint64_t {
  kStreamModel = 1,
  kStreamTrain = 2,
  kStreamVal = 3,
  kStreamTest = 4,
  kStreamSlices = 5,
};

}  // namespace detail

// ---------------------------------------------------------------------
// Gaussian linear model: y = <w*, x> + eps, eps ~ N(0,1), x ~ N(0, I_d),
// w* uniform on the unit sphere, redrawn per trial.
// ---------------------------------------------------------------------

struct GaussianLinregConfig {
  std::size_t d = 20;
  std::size_t n_train = 100;
  std::size_t n_val = 100;
  std::size_t n_test = 1000;
  std::uint64_t seed = 1;
  std::uint64_t trial = 0;
};

struct GaussianLinregData {
  Dataset train, val, test;
  std::vector<double> w_star;  // unit norm
};

inline GaussianLinregData gen_gaussian_linreg(const GaussianLinregConfig& cfg) {
  if (cfg.d == 0 || cfg.n_train == 0 || cfg.n_val == 0 || cfg.n_test == 0) {
    throw invalid_input_error("gen_gaussian_linreg: sizes must be positive");
  }
  SplitRng root = SplitRng(cfg.seed).split(cfg.trial);

  GaussianLinregData out;
  out.w_star.resize(cfg.d);
  {
    SplitRng rng = root.split(detail::kStreamModel);
    double norm2 = 0.0;
    for (double& v : out.w_star) {
      v = rng.normal();
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : out.w_star) v *= inv;
  }

  auto make_split = [&](std::size_t n, std::uint64_t tag) {
    SplitRng rng = root.split(tag);
    Dataset ds;
    ds.n = n;
    ds.xdim = cfg.d;
    ds.x.resize(n * cfg.d);
    ds.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < cfg.d; ++j) {
        const double xv = rng.normal();
        ds.x[i * cfg.d + j] = xv;
        mean += out.w_star[j] * xv;
      }
      ds.y[i] = mean + rng.normal();
    }
    return ds;
  };
  out.train = make_split(cfg.n_train, detail::kStreamTrain);
  out.val = make_split(cfg.n_val, detail::kStreamVal);
  out.test = make_split(cfg.n_test, detail::kStreamTest);
  return out;
}

// ---------------------------------------------------------------------
// Sinusoid with asymmetric mean-zero heteroskedastic noise.  x ~ U[0,1)
// falls into k equal bins; within bin i the noise is +Exp(rate l0_i) with
// probability l0_i/(l0_i + l1_i) = 1/(1+e) and -Exp(rate l1_i) otherwise,
// where l0_i = exp(3 - 3i/k) and l1_i = e * l0_i.  The mixture mean is
// exactly zero and its variance increases with the bin index.
// ---------------------------------------------------------------------

struct SinusoidConfig {
  std::size_t k = 5;
  std::size_t n_train = 200;
  std::size_t n_val = 100;
  std::size_t n_test = 500;
  std::uint64_t seed = 1;
  std::uint64_t trial = 0;
};

struct SinusoidData {
  Dataset train, val, test;
  double amp_cos = 0.0, amp_sin = 0.0;    // U0, U1
  double freq_cos = 0.0, freq_sin = 0.0;  // phases in [pi/4, 4 pi]
};

inline double sinusoid_mean(const SinusoidData& data, double x) {
  return data.amp_cos * std::cos(data.freq_cos * x) +
         data.amp_sin * std::sin(data.freq_sin * x);
}

inline SinusoidData gen_sinusoid(const SinusoidConfig& cfg) {
  if (cfg.k == 0 || cfg.n_train == 0 || cfg.n_val == 0 || cfg.n_test == 0) {
    throw invalid_input_error("gen_sinusoid: sizes must be positive");
  }
  SplitRng root = SplitRng(cfg.seed).split(cfg.trial);
  constexpr double kPi = 3.14159265358979323846;

  SinusoidData out;
  {
    SplitRng rng = root.split(detail::kStreamModel);
    out.amp_cos = rng.uniform(-1.0, 1.0);
    out.amp_sin = rng.uniform(-1.0, 1.0);
    out.freq_cos = rng.uniform(kPi / 4.0, 4.0 * kPi);
    out.freq_sin = rng.uniform(kPi / 4.0, 4.0 * kPi);
  }

  const double kk = static_cast<double>(cfg.k);
  auto make_split = [&](std::size_t n, std::uint64_t tag) {
    SplitRng rng = root.split(tag);
    Dataset ds;
    ds.n = n;
    ds.xdim = 1;
    ds.x.resize(n);
    ds.y.resize(n);
    ds.label.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.uniform01();
      auto bin = static_cast<int>(std::floor(x * kk));
      if (bin >= static_cast<int>(cfg.k)) bin = static_cast<int>(cfg.k) - 1;
      const double rate0 = std::exp(3.0 - 3.0 * bin / kk);
      const double rate1 = std::exp(4.0 - 3.0 * bin / kk);
      const double p_up = rate0 / (rate0 + rate1);  // = 1/(1+e)
      double eps;
      if (rng.bernoulli(p_up)) {
        eps = rng.exponential(rate0);
      } else {
        eps = -rng.exponential(rate1);
      }
      ds.x[i] = x;
      ds.y[i] = sinusoid_mean(out, x) + eps;
      ds.label[i] = bin;
    }
    return ds;
  };
  out.train = make_split(cfg.n_train, detail::kStreamTrain);
  out.val = make_split(cfg.n_val, detail::kStreamVal);
  out.test = make_split(cfg.n_test, detail::kStreamTest);
  return out;
}

// ---------------------------------------------------------------------
// Random-slice protocol on synthetic Gaussian features with a planted
// linear-softmax classifier standing in for real network features.
// ---------------------------------------------------------------------

struct SliceConfig {
  std::size_t d = 64;        // ambient feature dimension
  std::size_t d0 = 10;       // projection dimension
  double quantile_hi = 0.8;
  double quantile_lo = 0.2;
  std::size_t repeats = 10;
  std::size_t n_classes = 10;
  std::size_t n_val = 1000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 1;
  std::uint64_t trial = 0;  // repeat index

  void validate() const {
    if (!(quantile_lo > 0.0 && quantile_lo < quantile_hi &&
          quantile_hi < 1.0)) {
      throw invalid_input_error("SliceConfig: needs 0 < lo < hi < 1");
    }
    if (d == 0 || d0 == 0 || n_classes < 2 || n_val == 0 || n_test == 0) {
      throw invalid_input_error("SliceConfig: bad sizes");
    }
  }
};

struct SliceData {
  Dataset val, test;               // label = sampled class
  std::vector<double> planted;     // d x n_classes, column per class
  std::size_t n_classes = 0;

  // Nonconformity of label y at x: negative log-softmax of the planted
  // model, continuous in x so distinct-score arguments apply.
  double score(std::span<const double> x, int y) const {
    const std::size_t d = x.size();
    double max_logit = -std::numeric_limits<double>::infinity();
    std::vector<double> logits(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
      double acc = 0.0;
      const double* col = planted.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) acc += col[j] * x[j];
      logits[c] = acc;
      max_logit = std::max(max_logit, acc);
    }
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - max_logit);
    lse = max_logit + std::log(lse);
    return -(logits[static_cast<std::size_t>(y)] - lse);
  }
};

inline SliceData gen_slice_data(const SliceConfig& cfg) {
  cfg.validate();
  SplitRng root = SplitRng(cfg.seed).split(cfg.trial);

  SliceData out;
  out.n_classes = cfg.n_classes;
  out.planted.resize(cfg.d * cfg.n_classes);
  {
    SplitRng rng = root.split(detail::kStreamModel);
    const double scale = 3.0 / std::sqrt(static_cast<double>(cfg.d));
    for (double& v : out.planted) v = scale * rng.normal();
  }

  auto make_split = [&](std::size_t n, std::uint64_t tag) {
    SplitRng rng = root.split(tag);
    Dataset ds;
    ds.n = n;
    ds.xdim = cfg.d;
    ds.x.resize(n * cfg.d);
    ds.y.resize(n);
    ds.label.resize(n);
    std::vector<double> probs(cfg.n_classes);
    for (std::size_t i = 0; i < n; ++i) {
      double* xi = ds.x.data() + i * cfg.d;
      for (std::size_t j = 0; j < cfg.d; ++j) xi[j] = rng.normal();
      // sample y ~ softmax(planted^T x)
      double max_logit = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        double acc = 0.0;
        const double* col = out.planted.data() + c * cfg.d;
        for (std::size_t j = 0; j < cfg.d; ++j) acc += col[j] * xi[j];
        probs[c] = acc;
        max_logit = std::max(max_logit, acc);
      }
      double total = 0.0;
      for (double& p : probs) {
        p = std::exp(p - max_logit);
        total += p;
      }
      double uu = rng.uniform01() * total;
      std::size_t cls = 0;
      for (; cls + 1 < cfg.n_classes; ++cls) {
        if (uu < probs[cls]) break;
        uu -= probs[cls];
      }
      ds.label[i] = static_cast<int>(cls);
      ds.y[i] = static_cast<double>(cls);
    }
    return ds;
  };
  out.val = make_split(cfg.n_val, detail::kStreamVal);
  out.test = make_split(cfg.n_test, detail::kStreamTest);
  return out;
}

struct SliceGroups {
  std::vector<double> w;  // d x d0 projection matrix, column-major by slice
  std::vector<std::string> names;            // 2 d0 entries: hi/lo per row
  std::vector<std::vector<std::uint8_t>> flags;
};

// Random 20% slices of a feature matrix: for each projection direction w_j,
// the points at-or-beyond the empirical .8 (resp. .2) quantile of <w_j, x>.
// Ties sit on the >= / <= boundaries, so slices stay well defined for
// duplicated features; the hi and lo slices of one direction are disjoint
// whenever the two quantiles differ.
inline SliceGroups gen_slices(std::span<const double> x_rows, std::size_t n,
                              std::size_t xdim, const SliceConfig& cfg) {
  cfg.validate();
  if (n == 0 || x_rows.size() != n * xdim) {
    throw invalid_input_error("gen_slices: empty or inconsistent features");
  }
  SplitRng rng =
      SplitRng(cfg.seed).split(cfg.trial).split(detail::kStreamSlices);

  SliceGroups out;
  out.w.resize(xdim * cfg.d0);
  for (double& v : out.w) v = rng.normal();

  std::vector<double> proj(n);
  for (std::size_t j = 0; j < cfg.d0; ++j) {
    const double* wj = out.w.data() + j * xdim;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const double* xi = x_rows.data() + i * xdim;
      for (std::size_t a = 0; a < xdim; ++a) acc += wj[a] * xi[a];
      proj[i] = acc;
    }
    const double hi = empirical_quantile(proj, cfg.quantile_hi);
    const double lo = empirical_quantile(proj, cfg.quantile_lo);

    std::vector<std::uint8_t> hi_flags(n), lo_flags(n);
    for (std::size_t i = 0; i < n; ++i) {
      hi_flags[i] = proj[i] >= hi ? 1 : 0;
      lo_flags[i] = proj[i] <= lo ? 1 : 0;
    }
    out.names.push_back("slice" + std::to_string(j) + "_hi");
    out.flags.push_back(std::move(hi_flags));
    out.names.push_back("slice" + std::to_string(j) + "_lo");
    out.flags.push_back(std::move(lo_flags));
  }
  return out;
}

// ---------------------------------------------------------------------
// Base predictors fit on the training split.
// ---------------------------------------------------------------------

enum class PredictorKind { least_squares, polynomial };

struct Predictor {
  PredictorKind kind = PredictorKind::least_squares;
  std::vector<double> w;
  int degree = 0;
  bool degenerate = false;  // ridge fallback fired

  double operator()(std::span<const double> x) const {
    if (kind == PredictorKind::least_squares) {
      if (x.size() != w.size()) {
        throw invalid_input_error("Predictor: dimension mismatch");
      }
      double acc = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * x[j];
      return acc;
    }
    // polynomial in a scalar x
    double acc = 0.0, pow = 1.0;
    for (int k = 0; k <= degree; ++k) {
      acc += w[static_cast<std::size_t>(k)] * pow;
      pow *= x[0];
    }
    return acc;
  }
};

inline Predictor fit_least_squares(const Dataset& train) {
  if (train.n == 0) throw invalid_input_error("fit_least_squares: empty");
  Predictor p;
  p.kind = PredictorKind::least_squares;
  p.w = detail::least_squares(train.x, train.n, train.xdim, train.y,
                              &p.degenerate);
  return p;
}

inline Predictor fit_polynomial(const Dataset& train, int degree) {
  if (train.n == 0 || train.xdim != 1) {
    throw invalid_input_error("fit_polynomial: needs nonempty scalar-x data");
  }
  if (degree < 0) throw invalid_input_error("fit_polynomial: degree < 0");
  const auto p1 = static_cast<std::size_t>(degree + 1);
  std::vector<double> design(train.n * p1);
  for (std::size_t i = 0; i < train.n; ++i) {
    double pow = 1.0;
    for (std::size_t k = 0; k < p1; ++k) {
      design[i * p1 + k] = pow;
      pow *= train.x[i];
    }
  }
  Predictor p;
  p.kind = PredictorKind::polynomial;
  p.degree = degree;
  p.w = detail::least_squares(design, train.n, p1, train.y, &p.degenerate);
  return p;
}

// Absolute-error nonconformity |y - f(x)| for each point of a dataset.
inline std::vector<double> absolute_residual_scores(const Dataset& ds,
                                                    const Predictor& f) {
  std::vector<double> s(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) {
    s[i] = std::abs(ds.y[i] - f(ds.row(i)));
  }
  return s;
}

// CSV export (x columns, y, optional label) for external inspection.
inline std::string dataset_to_csv(const Dataset& ds, const std::string& split) {
  std::ostringstream out;
  for (std::size_t j = 0; j < ds.xdim; ++j) out << "x" << j << ",";
  out << "y,split";
  const bool labeled = !ds.label.empty();
  if (labeled) out << ",label";
  out << "\n";
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (std::size_t j = 0; j < ds.xdim; ++j) {
      out << format_double(ds.x[i * ds.xdim + j]) << ",";
    }
    out << format_double(ds.y[i]) << "," << split;
    if (labeled) out << "," << ds.label[i];
    out << "\n";
  }
  return out.str();
}

}  // namespace splitconf
