#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "splitconf/synthetic.hpp"

using namespace splitconf;

TEST_CASE("generators are bit-reproducible under (seed, trial)") {
  GaussianLinregConfig gc;
  gc.seed = 99;
  gc.trial = 3;
  const auto a = gen_gaussian_linreg(gc);
  const auto b = gen_gaussian_linreg(gc);
  CHECK(a.w_star == b.w_star);
  CHECK(a.train.x == b.train.x);
  CHECK(a.test.y == b.test.y);

  gc.trial = 4;
  const auto c = gen_gaussian_linreg(gc);
  CHECK(a.w_star != c.w_star);

  SinusoidConfig sc;
  sc.seed = 99;
  const auto s1 = gen_sinusoid(sc);
  const auto s2 = gen_sinusoid(sc);
  CHECK(s1.val.y == s2.val.y);

  SliceConfig slc;
  slc.seed = 5;
  slc.d = 8;
  slc.d0 = 2;
  slc.n_val = 50;
  slc.n_test = 60;
  const auto d1 = gen_slice_data(slc);
  const auto d2 = gen_slice_data(slc);
  CHECK(d1.val.x == d2.val.x);
  CHECK(d1.test.label == d2.test.label);
}

TEST_CASE("gaussian linear model has unit w*, unit noise variance") {
  GaussianLinregConfig gc;
  gc.d = 6;
  gc.n_train = 10;
  gc.n_val = 10;
  gc.n_test = 60000;
  gc.seed = 11;
  const auto data = gen_gaussian_linreg(gc);

  double norm2 = 0.0;
  for (double v : data.w_star) norm2 += v * v;
  CHECK(norm2 == Catch::Approx(1.0).epsilon(1e-12));

  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < data.test.n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < gc.d; ++j) {
      mean += data.w_star[j] * data.test.x[i * gc.d + j];
    }
    const double resid = data.test.y[i] - mean;
    sum += resid;
    sum2 += resid * resid;
  }
  const double n = static_cast<double>(data.test.n);
  CHECK(sum / n == Catch::Approx(0.0).margin(0.02));
  CHECK(sum2 / n == Catch::Approx(1.0).margin(0.03));
}

TEST_CASE("d=1 squared correlation between y and w* x is about one half") {
  GaussianLinregConfig gc;
  gc.d = 1;
  gc.n_train = 10;
  gc.n_val = 10;
  gc.n_test = 60000;
  gc.seed = 21;
  const auto data = gen_gaussian_linreg(gc);
  double sxy = 0.0, sxx = 0.0, syy = 0.0, sx = 0.0, sy = 0.0;
  const double n = static_cast<double>(data.test.n);
  for (std::size_t i = 0; i < data.test.n; ++i) {
    const double xw = data.test.x[i] * data.w_star[0];
    const double y = data.test.y[i];
    sx += xw;
    sy += y;
    sxy += xw * y;
    sxx += xw * xw;
    syy += y * y;
  }
  const double cov = sxy / n - sx / n * sy / n;
  const double vx = sxx / n - sx / n * sx / n;
  const double vy = syy / n - sy / n * sy / n;
  const double corr2 = cov * cov / (vx * vy);
  CHECK(corr2 == Catch::Approx(0.5).margin(0.02));
}

TEST_CASE("sinusoid noise is mean zero per bin with increasing variance") {
  SinusoidConfig sc;
  sc.k = 5;
  sc.n_train = 10;
  sc.n_val = 10;
  sc.n_test = 500000;  // about 1e5 per bin
  sc.seed = 31;
  const auto data = gen_sinusoid(sc);

  std::vector<double> sum(sc.k, 0.0), sum2(sc.k, 0.0);
  std::vector<std::size_t> count(sc.k, 0);
  for (std::size_t i = 0; i < data.test.n; ++i) {
    const double eps =
        data.test.y[i] - sinusoid_mean(data, data.test.x[i]);
    const auto b = static_cast<std::size_t>(data.test.label[i]);
    sum[b] += eps;
    sum2[b] += eps * eps;
    ++count[b];
  }
  double prev_var = 0.0;
  for (std::size_t b = 0; b < sc.k; ++b) {
    REQUIRE(count[b] > 50000);
    const double nb = static_cast<double>(count[b]);
    const double mean = sum[b] / nb;
    const double var = sum2[b] / nb - mean * mean;
    // exact mixture: mean 0, sd = sqrt(2/(1+e)) / rate0 ... just test 0 + order
    CHECK(mean == Catch::Approx(0.0).margin(4.0 * std::sqrt(var / nb)));
    CHECK(var > prev_var);
    prev_var = var;
  }

  // |f| <= 2 everywhere (two amplitude-<=1 sinusoids)
  for (double x = 0.0; x < 1.0; x += 0.001) {
    CHECK(std::abs(sinusoid_mean(data, x)) <= 2.0);
  }
}

TEST_CASE("slices have the advertised sizes and are disjoint per direction") {
  SliceConfig sc;
  sc.d = 12;
  sc.d0 = 3;
  sc.n_val = 40;
  sc.n_test = 500;
  sc.seed = 41;
  const auto data = gen_slice_data(sc);
  const auto slices = gen_slices(data.test.x, data.test.n, sc.d, sc);
  REQUIRE(slices.names.size() == 2 * sc.d0);

  const auto expected =
      static_cast<long>(std::ceil(0.2 * static_cast<double>(sc.n_test)));
  for (std::size_t j = 0; j < sc.d0; ++j) {
    const auto& hi = slices.flags[2 * j];
    const auto& lo = slices.flags[2 * j + 1];
    long hi_count = 0, lo_count = 0;
    for (std::size_t i = 0; i < sc.n_test; ++i) {
      hi_count += hi[i];
      lo_count += lo[i];
      CHECK_FALSE((hi[i] && lo[i]));  // disjoint
    }
    CHECK(std::abs(hi_count - expected) <= 1);
    CHECK(std::abs(lo_count - expected) <= 1);
  }

  // d0 = 1: exactly two slices; duplicated features still well defined
  SliceConfig one = sc;
  one.d0 = 1;
  std::vector<double> dup(60 * sc.d, 0.5);
  const auto dup_slices = gen_slices(dup, 60, sc.d, one);
  CHECK(dup_slices.names.size() == 2);
  // all projections tie: every point is at-or-beyond both quantiles
  for (std::size_t i = 0; i < 60; ++i) {
    CHECK(dup_slices.flags[0][i] == 1);
    CHECK(dup_slices.flags[1][i] == 1);
  }
}

TEST_CASE("slice scores are finite and favor the sampled label") {
  SliceConfig sc;
  sc.d = 10;
  sc.d0 = 2;
  sc.n_val = 200;
  sc.n_test = 10;
  sc.seed = 51;
  const auto data = gen_slice_data(sc);
  double own = 0.0, other = 0.0;
  for (std::size_t i = 0; i < data.val.n; ++i) {
    const auto x = data.val.row(i);
    own += data.score(x, data.val.label[i]);
    other += data.score(x, (data.val.label[i] + 1) %
                               static_cast<int>(sc.n_classes));
  }
  CHECK(std::isfinite(own));
  CHECK(own / static_cast<double>(data.val.n) <
        other / static_cast<double>(data.val.n));
}

TEST_CASE("least squares interpolates noiseless linear data") {
  SplitRng rng(61);
  Dataset train;
  train.n = 50;
  train.xdim = 4;
  train.x.resize(train.n * train.xdim);
  train.y.resize(train.n);
  const std::vector<double> w{1.0, -2.0, 0.5, 3.0};
  for (std::size_t i = 0; i < train.n; ++i) {
    double y = 0.0;
    for (std::size_t j = 0; j < train.xdim; ++j) {
      const double x = rng.normal();
      train.x[i * train.xdim + j] = x;
      y += w[j] * x;
    }
    train.y[i] = y;
  }
  const auto f = fit_least_squares(train);
  CHECK_FALSE(f.degenerate);
  for (std::size_t i = 0; i < train.n; ++i) {
    CHECK(f(train.row(i)) == Catch::Approx(train.y[i]).margin(1e-8));
  }
}

TEST_CASE("degree-5 polynomial on constant data returns the constant") {
  Dataset train;
  train.n = 30;
  train.xdim = 1;
  train.x.resize(30);
  train.y.assign(30, 7.25);
  for (std::size_t i = 0; i < 30; ++i) {
    train.x[i] = static_cast<double>(i) / 30.0;
  }
  const auto f = fit_polynomial(train, 5);
  for (double x = 0.0; x <= 1.0; x += 0.1) {
    CHECK(f(std::vector<double>{x}) == Catch::Approx(7.25).margin(1e-6));
  }
}

TEST_CASE("OLS is consistent at the sqrt(d/n) rate") {
  GaussianLinregConfig gc;
  gc.d = 10;
  gc.n_train = 5000;
  gc.n_val = 10;
  gc.n_test = 10;
  gc.seed = 71;
  const auto data = gen_gaussian_linreg(gc);
  const auto f = fit_least_squares(data.train);
  double err2 = 0.0;
  for (std::size_t j = 0; j < gc.d; ++j) {
    err2 += (f.w[j] - data.w_star[j]) * (f.w[j] - data.w_star[j]);
  }
  CHECK(std::sqrt(err2) <
        3.0 * std::sqrt(static_cast<double>(gc.d) /
                        static_cast<double>(gc.n_train)));
}

TEST_CASE("dataset CSV export carries x columns, y, split and label") {
  SinusoidConfig sc;
  sc.n_train = 3;
  sc.n_val = 3;
  sc.n_test = 3;
  sc.seed = 81;
  const auto data = gen_sinusoid(sc);
  const std::string csv = dataset_to_csv(data.train, "train");
  CHECK(csv.rfind("x0,y,split,label\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find(",train,") != std::string::npos);
}
