#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "splitconf/scores.hpp"

using namespace splitconf;

TEST_CASE("pinball loss matches its definition") {
  const Level a(0.1);
  CHECK(pinball_loss(0.0, a) == 0.0);
  CHECK(pinball_loss(2.0, a) == Catch::Approx(0.2));
  CHECK(pinball_loss(-2.0, a) == Catch::Approx(1.8));
  CHECK_THROWS_AS(pinball_loss(std::nan(""), a), invalid_input_error);
  CHECK_THROWS_AS(Level(0.0), invalid_input_error);
  CHECK_THROWS_AS(Level(1.0), invalid_input_error);
}

TEST_CASE("pinball loss is nonnegative, zero only at zero, and convex") {
  SplitRng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const Level a(rng.uniform(0.01, 0.99));
    const double t = rng.uniform(-10.0, 10.0);
    const double v = pinball_loss(t, a);
    CHECK(v >= 0.0);
    if (std::abs(t) > 1e-12) CHECK(v > 0.0);

    const double t1 = rng.uniform(-10.0, 10.0);
    const double t2 = rng.uniform(-10.0, 10.0);
    const double lam = rng.uniform01();
    const double mix = pinball_loss(lam * t1 + (1.0 - lam) * t2, a);
    const double chord =
        lam * pinball_loss(t1, a) + (1.0 - lam) * pinball_loss(t2, a);
    CHECK(mix <= chord + 1e-12);
  }
}

TEST_CASE("empirical quantile picks the ceil(beta n) order statistic") {
  const std::vector<double> three{3.0, 1.0, 2.0};
  CHECK(empirical_quantile(three, 2.0 / 3.0) == 2.0);

  std::vector<double> nine;
  for (int i = 1; i <= 9; ++i) nine.push_back(i);
  CHECK(empirical_quantile(nine, 0.9) == 9.0);  // ceil(8.1) = 9

  SplitRng rng(3);
  std::vector<double> any(17);
  for (double& v : any) v = rng.uniform(-5.0, 5.0);
  CHECK(empirical_quantile(any, 1.0) ==
        *std::max_element(any.begin(), any.end()));

  CHECK_THROWS_AS(empirical_quantile({}, 0.5), invalid_input_error);
  CHECK_THROWS_AS(empirical_quantile(three, 0.0), invalid_input_error);
  CHECK_THROWS_AS(empirical_quantile(three, 1.1), invalid_input_error);
}

TEST_CASE("empirical quantile is monotone in beta and permutation invariant") {
  SplitRng rng(5);
  std::vector<double> scores(40);
  for (double& v : scores) v = rng.normal();

  double prev = -1e300;
  for (double beta = 0.05; beta <= 1.0; beta += 0.05) {
    const double q = empirical_quantile(scores, beta);
    CHECK(q >= prev);
    prev = q;
  }

  std::vector<double> shuffled = scores;
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1], shuffled[rng.next_u64() % i]);
  }
  CHECK(empirical_quantile(shuffled, 0.37) ==
        empirical_quantile(scores, 0.37));
}

TEST_CASE("enlarged quantile caps at the maximum and hits the rank formula") {
  std::vector<double> nine;
  for (int i = 1; i <= 9; ++i) nine.push_back(i);
  CHECK(enlarged_quantile(nine, Level(0.1)) == 9.0);  // (0.9)(10/9) = 1

  std::vector<double> nineteen;
  for (int i = 1; i <= 19; ++i) nineteen.push_back(i);
  CHECK(enlarged_quantile(nineteen, Level(0.1)) == 18.0);  // ceil(0.9*20)

  const std::vector<double> one{5.0};
  CHECK(enlarged_quantile(one, Level(0.5)) == 5.0);
}

TEST_CASE("empirical mass at the non-enlarged quantile is in [1-a, 1-a+1/n]") {
  SplitRng rng(17);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 20 + rng.next_u64() % 200;
    const double alpha = rng.uniform(0.02, 0.5);
    std::vector<double> scores(n);
    for (double& v : scores) v = rng.uniform01();
    const double tau = empirical_quantile(scores, 1.0 - alpha);
    double frac = 0.0;
    for (double s : scores) frac += s <= tau ? 1.0 : 0.0;
    frac /= static_cast<double>(n);
    CHECK(frac >= 1.0 - alpha - 1e-12);
    CHECK(frac <= 1.0 - alpha + 1.0 / static_cast<double>(n) + 1e-12);
  }
}

TEST_CASE("jitter is deterministic, tiny, tie-breaking, and order-safe") {
  const JitterSpec spec(1e-10, 99);
  const std::vector<double> ties{1.0, 1.0, 1.0};
  const auto a = jitter_scores(ties, spec);
  const auto b = jitter_scores(ties, spec);
  CHECK(a == b);
  CHECK(a.size() == 3);
  for (double v : a) CHECK(std::abs(v - 1.0) <= 1e-10);
  CHECK(a[0] != a[1]);
  CHECK(a[1] != a[2]);
  CHECK(a[0] != a[2]);

  CHECK(jitter_scores(std::vector<double>{}, spec).empty());

  // gaps larger than 2*scale keep their order
  std::vector<double> spaced{0.0, 1.0, 2.0, 5.0};
  const auto j = jitter_scores(spaced, JitterSpec(0.4, 1));
  CHECK(std::is_sorted(j.begin(), j.end()));

  CHECK_THROWS_AS(JitterSpec(0.0, 1), invalid_input_error);
  CHECK(default_jitter_scale(spaced) == Catch::Approx(6e-10));
}
