#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "splitconf/harness.hpp"

using namespace splitconf;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_gaussian() {
  ExperimentConfig cfg;
  cfg.experiment = ExperimentKind::gaussian_linreg;
  cfg.trials = 2;
  cfg.alpha_des = 0.1;
  cfg.methods = {parse_method_spec("static", CorrectionKind::none),
                 parse_method_spec("adaptive:scaling", CorrectionKind::none)};
  cfg.seed = 12345;
  cfg.gauss.d = 4;
  cfg.gauss.n_train = 30;
  cfg.gauss.n_test = 200;
  cfg.gauss_nval_grid = {60};
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("method spec parsing") {
  const auto m = parse_method_spec("adaptive:scaling", CorrectionKind::none);
  CHECK(m.name == "adaptive");
  CHECK(m.correction == CorrectionKind::scaling);
  CHECK(m.label() == "adaptive:scaling");

  const auto bare = parse_method_spec("adaptive", CorrectionKind::naive);
  CHECK(bare.correction == CorrectionKind::naive);
  CHECK(bare.label() == "adaptive:naive");

  CHECK(parse_method_spec("static", CorrectionKind::naive).label() ==
        "static");
  CHECK_THROWS_AS(parse_method_spec("bogus", CorrectionKind::none),
                  invalid_input_error);
  CHECK_THROWS_AS(parse_method_spec("adaptive:bogus", CorrectionKind::none),
                  invalid_input_error);
  CHECK_THROWS_AS(experiment_kind_from_string("nope"), invalid_input_error);
}

TEST_CASE("single-cell run yields exactly one marginal record per method") {
  ExperimentConfig cfg = tiny_gaussian();
  cfg.trials = 1;
  cfg.methods = {parse_method_spec("static", CorrectionKind::none)};
  const auto records = run_experiment(cfg);
  REQUIRE(records.size() == 1);
  CHECK(records[0].method == "static");
  CHECK(records[0].group == "marginal");
  CHECK(records[0].total == 200);
  CHECK(records[0].covered <= records[0].total);
  CHECK(records[0].n_val == 60);
}

TEST_CASE("experiment output is byte-identical across runs and threads") {
  ExperimentConfig cfg = tiny_gaussian();
  const auto r1 = run_experiment(cfg);
  cfg.threads = 1;
  const auto r2 = run_experiment(cfg);

  const std::string p1 = "/tmp/splitconf_det1.csv";
  const std::string p2 = "/tmp/splitconf_det2.csv";
  write_records_csv(r1, p1);
  write_records_csv(r2, p2);
  CHECK(slurp(p1) == slurp(p2));
  // timing lives in the sidecar, not the deterministic table
  CHECK(slurp(p1).find("millis") == std::string::npos);
  for (const std::string p : {p1, p2}) {
    std::remove(p.c_str());
    std::remove((p + ".timing.csv").c_str());
    std::remove((p + ".meta.json").c_str());
  }
}

TEST_CASE("sinusoid records: marginal equals the bin-weighted average") {
  ExperimentConfig cfg;
  cfg.experiment = ExperimentKind::sinusoid;
  cfg.trials = 2;
  cfg.methods = {parse_method_spec("two-sided:scaling", CorrectionKind::none)};
  cfg.seed = 777;
  cfg.sinusoid.n_train = 50;
  cfg.sinusoid.n_test = 200;
  cfg.sinusoid_nval_grid = {100};
  const auto records = run_experiment(cfg);
  REQUIRE(records.size() == 2 * (1 + 5));  // marginal + 5 bins, 2 trials

  for (std::size_t t = 0; t < 2; ++t) {
    const auto& marginal = records[t * 6];
    REQUIRE(marginal.group == "marginal");
    std::size_t covered = 0, total = 0;
    for (std::size_t b = 1; b <= 5; ++b) {
      covered += records[t * 6 + b].covered;
      total += records[t * 6 + b].total;
    }
    CHECK(covered == marginal.covered);
    CHECK(total == marginal.total);
  }
}

TEST_CASE("slices experiment produces slice rows for all three methods") {
  ExperimentConfig cfg;
  cfg.experiment = ExperimentKind::slices;
  cfg.trials = 1;
  cfg.methods = {parse_method_spec("static", CorrectionKind::none),
                 parse_method_spec("adaptive", CorrectionKind::none),
                 parse_method_spec("full-grid", CorrectionKind::none)};
  cfg.seed = 31;
  cfg.slice.d = 10;
  cfg.slice.d0 = 2;
  cfg.slice.n_val = 150;
  cfg.slice.n_test = 150;
  cfg.slice.n_classes = 4;
  const auto records = run_experiment(cfg);
  REQUIRE(records.size() == 3 * (1 + 4));  // marginal + 2*d0 slices
  for (const auto& r : records) {
    if (r.group == "marginal") {
      CHECK(r.total == 150);
      CHECK(r.rate > 0.5);  // sanity: near 0.9 nominal
    }
  }
}

TEST_CASE("summary aggregates by method, group and n_val") {
  std::vector<TrialRecord> records;
  for (std::size_t t = 0; t < 3; ++t) {
    TrialRecord r;
    r.trial = t;
    r.method = "static";
    r.group = "marginal";
    r.n_val = 100;
    r.covered = 90;
    r.total = 100;
    r.rate = 0.9;
    r.width_mean = 2.0;
    r.width_median = 2.0;
    records.push_back(r);
    r.method = "adaptive:none";
    r.rate = 0.8 + 0.1 * static_cast<double>(t);
    records.push_back(r);
  }
  const auto rows = emit_summary(records);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "static");
  CHECK(rows[0].trials == 3);
  CHECK(rows[0].coverage_std == 0.0);  // identical rows
  CHECK(rows[1].coverage_mean == Catch::Approx(0.9));
  CHECK(rows[1].coverage_std > 0.0);

  CHECK_THROWS_AS(emit_summary({}), invalid_input_error);
}

TEST_CASE("bound verification verdicts at reduced trial counts") {
  VerifyConfig vc;
  vc.kind = VerifyKind::prop2;
  vc.trials = 200;
  vc.n = 500;
  vc.gamma = 0.08;
  vc.seed = 5;
  const auto prop2 = verify_bound(vc);
  CHECK(prop2.trials == 200);
  CHECK(prop2.pass);
  CHECK(prop2.violation_rate <= prop2.threshold);

  vc.kind = VerifyKind::corollary1;
  CHECK(verify_bound(vc).pass);

  vc.kind = VerifyKind::prop3;
  vc.two_sided = true;
  vc.delta = 0.05;
  CHECK(verify_bound(vc).pass);

  vc.kind = VerifyKind::corollary3;
  vc.trials = 100;
  vc.n = 400;
  vc.d = 3;
  vc.t = 0.05;
  const auto cor3 = verify_bound(vc);
  CHECK(cor3.pass);

  vc.kind = VerifyKind::lemma8;
  vc.trials = 50;
  const auto lemma8 = verify_bound(vc);
  CHECK(lemma8.violations == 0);
  CHECK(lemma8.pass);
}

TEST_CASE("exact-CDF mean coverage of the enlarged rule is near (k)/(n+1)") {
  const auto res = mean_exact_coverage_uniform(100, Level(0.1), 2000, 99,
                                               true);
  // enlarged rank k = 91 of n = 100: mean F(tau) = 91/101
  CHECK(res.mean_coverage ==
        Catch::Approx(91.0 / 101.0).margin(5.0 * res.mc_sigma));
  CHECK(res.mc_sigma < 0.002);
}

TEST_CASE("bound-verify experiment emits one verdict row per kind") {
  ExperimentConfig cfg;
  cfg.experiment = ExperimentKind::bound_verify;
  cfg.trials = 60;
  cfg.methods = {parse_method_spec("static", CorrectionKind::none)};
  cfg.seed = 3;
  const auto records = run_experiment(cfg);
  REQUIRE(records.size() == 5);
  for (const auto& r : records) {
    CHECK(r.group == "violations");
    CHECK(r.fit_millis == 1.0);  // pass flag
  }
}
