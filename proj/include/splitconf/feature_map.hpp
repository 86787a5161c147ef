#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splitconf/errors.hpp"
#include "splitconf/rng.hpp"
#include "splitconf/scores.hpp"

namespace splitconf {

// Named mapping x -> phi(x) in R^d.  When has_bias is set, coordinate 0 is
// identically 1.  b_phi carries sup_x ||phi(x)||_2 when it is known.
struct FeatureMap {
  std::string name;
  std::size_t dim = 0;
  bool has_bias = false;
  std::optional<double> b_phi;
  std::function<void(std::span<const double>, std::span<double>)> apply_fn;

  void apply(std::span<const double> x, std::span<double> out) const {
    if (out.size() != dim) {
      throw invalid_input_error("FeatureMap::apply: output size mismatch");
    }
    apply_fn(x, out);
    for (double v : out) {
      if (!std::isfinite(v)) {
        throw invalid_input_error("FeatureMap '" + name +
                                  "' produced a non-finite coordinate");
      }
    }
  }

  std::vector<double> operator()(std::span<const double> x) const {
    std::vector<double> out(dim);
    apply(x, out);
    return out;
  }
};

// phi(x) = (1): plain split conformal expressed as a quantile regression.
inline FeatureMap constant_map() {
  FeatureMap m;
  m.name = "constant";
  m.dim = 1;
  m.has_bias = true;
  m.b_phi = 1.0;
  m.apply_fn = [](std::span<const double>, std::span<double> out) {
    out[0] = 1.0;
  };
  return m;
}

// phi(x) = (1, 1{x_1 > 0}, ..., 1{x_p > 0}).
inline FeatureMap sign_indicator_map(std::size_t ambient_dim) {
  FeatureMap m;
  m.name = "sign-indicator-" + std::to_string(ambient_dim);
  m.dim = ambient_dim + 1;
  m.has_bias = true;
  m.b_phi = std::sqrt(static_cast<double>(ambient_dim + 1));
  m.apply_fn = [ambient_dim](std::span<const double> x,
                             std::span<double> out) {
    if (x.size() != ambient_dim) {
      throw invalid_input_error("sign indicator map: bad input dimension");
    }
    out[0] = 1.0;
    for (std::size_t j = 0; j < ambient_dim; ++j) {
      out[j + 1] = x[j] > 0.0 ? 1.0 : 0.0;
    }
  };
  return m;
}

// Indicators of a total partition x -> group_of(x) in {0, ..., n_groups-1},
// optionally prefixed by a constant-1 coordinate.
inline FeatureMap group_indicator_map(
    std::string name, std::size_t n_groups,
    std::function<std::size_t(std::span<const double>)> group_of,
    bool include_bias = false) {
  FeatureMap m;
  m.name = std::move(name);
  m.dim = n_groups + (include_bias ? 1 : 0);
  m.has_bias = include_bias;
  m.b_phi = include_bias ? std::sqrt(2.0) : 1.0;
  m.apply_fn = [n_groups, include_bias, group_of = std::move(group_of)](
                   std::span<const double> x, std::span<double> out) {
    std::size_t g = group_of(x);
    if (g >= n_groups) {
      throw invalid_input_error("group indicator map: group index out of range");
    }
    std::size_t off = 0;
    if (include_bias) {
      out[0] = 1.0;
      off = 1;
    }
    for (std::size_t j = 0; j < n_groups; ++j) out[off + j] = 0.0;
    out[off + g] = 1.0;
  };
  return m;
}

// phi(x) = (1, W^T x) with W_ij ~ N(0,1) fixed at construction.
inline FeatureMap random_projection_map(std::size_t ambient_dim,
                                        std::size_t proj_dim,
                                        std::uint64_t seed,
                                        bool include_bias = true) {
  SplitRng rng = SplitRng(seed).split(0x70726f6a);
  auto w = std::make_shared<std::vector<double>>(ambient_dim * proj_dim);
  for (double& v : *w) v = rng.normal();

  FeatureMap m;
  m.name = "random-projection-" + std::to_string(proj_dim);
  m.dim = proj_dim + (include_bias ? 1 : 0);
  m.has_bias = include_bias;
  m.b_phi = std::nullopt;  // unbounded on R^ambient
  m.apply_fn = [ambient_dim, proj_dim, include_bias, w](
                   std::span<const double> x, std::span<double> out) {
    if (x.size() != ambient_dim) {
      throw invalid_input_error("random projection map: bad input dimension");
    }
    std::size_t off = 0;
    if (include_bias) {
      out[0] = 1.0;
      off = 1;
    }
    for (std::size_t j = 0; j < proj_dim; ++j) {
      double acc = 0.0;
      const double* col = w->data() + j * ambient_dim;
      for (std::size_t i = 0; i < ambient_dim; ++i) acc += col[i] * x[i];
      out[off + j] = acc;
    }
  };
  return m;
}

// Immutable (phi(X_i), S_i) pairs used to fit thresholds.  Rows are stored
// row-major: row(i) is phi(X_i).
class CalibrationSample {
 public:
  CalibrationSample(std::vector<double> features_row_major,
                    std::vector<double> scores, std::size_t dim,
                    std::string feature_map_name = "phi")
      : features_(std::move(features_row_major)),
        scores_(std::move(scores)),
        dim_(dim),
        map_name_(std::move(feature_map_name)) {
    if (dim_ == 0) throw invalid_input_error("CalibrationSample: dim == 0");
    if (scores_.empty()) {
      throw invalid_input_error("CalibrationSample: needs at least one row");
    }
    if (features_.size() != scores_.size() * dim_) {
      throw invalid_input_error(
          "CalibrationSample: feature matrix does not match score count");
    }
    require_finite_scores(scores_);
    for (double v : features_) {
      if (!std::isfinite(v)) {
        throw invalid_input_error("CalibrationSample: non-finite feature");
      }
    }
  }

  // Applies the map to raw x-rows (row-major, n x xdim).
  static CalibrationSample from_raw(const FeatureMap& map,
                                    std::span<const double> x_rows,
                                    std::size_t xdim,
                                    std::span<const double> scores) {
    if (xdim == 0 || x_rows.size() != scores.size() * xdim) {
      throw invalid_input_error("from_raw: inconsistent raw dimensions");
    }
    const std::size_t n = scores.size();
    std::vector<double> phi(n * map.dim);
    for (std::size_t i = 0; i < n; ++i) {
      map.apply(x_rows.subspan(i * xdim, xdim),
                std::span<double>(phi.data() + i * map.dim, map.dim));
    }
    return CalibrationSample(std::move(phi),
                             std::vector<double>(scores.begin(), scores.end()),
                             map.dim, map.name);
  }

  std::size_t n() const { return scores_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& feature_map_name() const { return map_name_; }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * dim_, dim_};
  }
  double score(std::size_t i) const { return scores_[i]; }
  std::span<const double> scores() const { return scores_; }
  std::span<const double> features() const { return features_; }

  double max_row_norm() const {
    double best = 0.0;
    for (std::size_t i = 0; i < n(); ++i) {
      double acc = 0.0;
      for (double v : row(i)) acc += v * v;
      best = std::max(best, acc);
    }
    return std::sqrt(best);
  }

  // Same features, different scores (jittered calibration, shifted targets).
  CalibrationSample with_scores(std::vector<double> scores) const {
    return CalibrationSample(features_, std::move(scores), dim_, map_name_);
  }

 private:
  std::vector<double> features_;
  std::vector<double> scores_;
  std::size_t dim_;
  std::string map_name_;
};

}  // namespace splitconf
