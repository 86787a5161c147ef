// Command-line front end: calibrate rules from score CSVs, evaluate them on
// test CSVs, run the synthetic experiments, print bound values, and verify
// the finite-sample bounds by Monte Carlo.
//
// Exit codes: 0 success, 2 invalid configuration or input, 3 verification
// failure.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "splitconf/splitconf.hpp"

namespace {

using namespace splitconf;

constexpr int kExitOk = 0;
constexpr int kExitBadConfig = 2;
constexpr int kExitVerifyFailed = 3;

CorrectionKind correction_from_string(const std::string& s) {
  if (s == "none") return CorrectionKind::none;
  if (s == "naive") return CorrectionKind::naive;
  if (s == "scaling") return CorrectionKind::scaling;
  throw invalid_input_error("unknown correction '" + s + "'");
}

// Feature columns are phi0..phi{d-1}; a lone `score` column means a
// constant-feature problem.
struct LoadedTable {
  std::vector<double> phi;  // n x d, d >= 1 (constant column when absent)
  std::vector<double> scores;
  std::size_t d = 0;
  std::vector<GroupMask> groups;  // from group_* columns
};

LoadedTable load_scores_csv(const std::string& path) {
  const CsvTable csv = read_csv_file(path);
  LoadedTable out;
  const std::size_t score_col = csv.column("score");

  std::vector<std::size_t> phi_cols;
  for (std::size_t j = 0;; ++j) {
    const std::string name = "phi" + std::to_string(j);
    if (!csv.has_column(name)) break;
    phi_cols.push_back(csv.column(name));
  }
  std::vector<std::size_t> group_cols;
  for (std::size_t j = 0; j < csv.header.size(); ++j) {
    if (csv.header[j].rfind("group_", 0) == 0) group_cols.push_back(j);
  }

  const std::size_t n = csv.rows.size();
  if (n == 0) throw invalid_input_error("CSV has no data rows: " + path);
  out.d = phi_cols.empty() ? 1 : phi_cols.size();
  out.phi.resize(n * out.d);
  out.scores.resize(n);
  for (auto col : group_cols) {
    out.groups.push_back(GroupMask{csv.header[col],
                                   std::vector<std::uint8_t>(n, 0), {}});
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.scores[i] = csv.as_double(i, score_col);
    if (phi_cols.empty()) {
      out.phi[i] = 1.0;
    } else {
      for (std::size_t j = 0; j < phi_cols.size(); ++j) {
        out.phi[i * out.d + j] = csv.as_double(i, phi_cols[j]);
      }
    }
    for (std::size_t g = 0; g < group_cols.size(); ++g) {
      out.groups[g].flags[i] = csv.as_double(i, group_cols[g]) != 0.0;
    }
  }
  return out;
}

void write_report_csv(const CoverageReport& report, const std::string& path,
                      double alpha_desired) {
  std::ostringstream out;
  out << "# schema_version=1\n";
  out << "name,kind,n,covered,rate,gap,bound_value\n";
  out << "marginal,marginal," << report.n_test << ',' << report.covered << ','
      << format_double(report.marginal_rate) << ','
      << format_double(report.marginal_rate - (1.0 - alpha_desired)) << ",\n";
  for (const auto& g : report.per_group) {
    out << g.name << ",group," << g.count << ',' << g.covered << ','
        << format_double(g.rate) << ','
        << format_double(g.rate - (1.0 - alpha_desired)) << ",\n";
  }
  std::size_t widx = 0;
  for (const auto& w : report.per_weight) {
    out << "weight" << widx++ << ",weight," << report.n_test << ",,"
        << ',' << format_double(w.weighted_gap) << ",\n";
  }
  atomic_write_file(path, out.str());
}

nlohmann::json report_to_json(const CoverageReport& report) {
  nlohmann::json j;
  j["n_test"] = report.n_test;
  j["covered"] = report.covered;
  j["marginal_rate"] = report.marginal_rate;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : report.per_group) {
    nlohmann::json entry = {{"name", g.name},
                            {"count", g.count},
                            {"covered", g.covered},
                            {"empty", g.empty}};
    entry["rate"] = g.empty ? nlohmann::json() : nlohmann::json(g.rate);
    j["groups"].push_back(std::move(entry));
  }
  j["weights"] = nlohmann::json::array();
  for (const auto& w : report.per_weight) {
    j["weights"].push_back({{"u", w.u},
                            {"weighted_gap", w.weighted_gap},
                            {"mean_weight", w.mean_weight}});
  }
  return j;
}

int cmd_calibrate(const std::string& in_path, const std::string& out_path,
                  double alpha, const std::string& method,
                  const std::string& correction, double jitter_scale,
                  std::uint64_t seed) {
  const LoadedTable table = load_scores_csv(in_path);
  const Level level(alpha);
  ConfidenceRule rule;
  if (method == "static") {
    rule = calibrate_static(table.scores, level, true);
  } else if (method == "static-plain") {
    rule = calibrate_static(table.scores, level, false);
  } else {
    const CalibrationSample sample(table.phi, table.scores, table.d,
                                   "csv:phi" + std::to_string(table.d));
    const CorrectionPolicy policy{correction_from_string(correction),
                                  sample.dim(), sample.n()};
    if (method == "adaptive") {
      std::optional<JitterSpec> jitter;
      if (jitter_scale > 0.0) jitter = JitterSpec(jitter_scale, seed);
      rule = calibrate_adaptive(sample, level, policy, jitter);
    } else if (method == "two-sided") {
      rule = calibrate_two_sided(sample, level, policy);
    } else {
      throw invalid_input_error("unknown method '" + method + "'");
    }
  }
  atomic_write_file(out_path, rule_to_json(rule).dump(2) + "\n");
  std::cout << "wrote rule: " << out_path << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& rule_path, const std::string& test_path,
                 const std::string& out_path, bool also_json) {
  std::ifstream in(rule_path);
  if (!in) throw invalid_input_error("cannot open rule: " + rule_path);
  nlohmann::json j;
  in >> j;
  const ConfidenceRule rule = rule_from_json(j);

  const LoadedTable table = load_scores_csv(test_path);
  const std::size_t want = rule.kind == RuleKind::static_threshold
                               ? table.d  // static ignores features
                               : rule.dim;
  if (rule.kind != RuleKind::static_threshold && table.d != want) {
    throw invalid_input_error("test CSV feature dimension does not match rule");
  }
  const CalibrationSample test(table.phi, table.scores, table.d, "csv");
  SplitRng stream = SplitRng(rule.jitter ? rule.jitter->seed : 0).split(1);
  const CoverageReport report =
      evaluate_coverage(rule, test, table.groups, {}, &stream);
  write_report_csv(report, out_path, rule.alpha_desired);
  if (also_json) {
    atomic_write_file(out_path + ".json", report_to_json(report).dump(2) + "\n");
  }
  std::cout << "marginal coverage: " << format_double(report.marginal_rate)
            << " (n=" << report.n_test << ")\n";
  return kExitOk;
}

void apply_json_config(const nlohmann::json& j, ExperimentConfig& cfg) {
  if (j.contains("experiment")) {
    cfg.experiment = experiment_kind_from_string(j["experiment"]);
  }
  if (j.contains("trials")) cfg.trials = j["trials"];
  if (j.contains("alpha")) cfg.alpha_des = j["alpha"];
  if (j.contains("correction")) {
    cfg.correction = correction_from_string(j["correction"]);
  }
  if (j.contains("seed")) cfg.seed = j["seed"];
  if (j.contains("out")) cfg.output_path = j["out"];
  if (j.contains("threads")) cfg.threads = j["threads"];
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j["methods"]) {
      cfg.methods.push_back(
          parse_method_spec(m.get<std::string>(), cfg.correction));
    }
  }
  if (j.contains("gaussian")) {
    const auto& g = j["gaussian"];
    if (g.contains("d")) cfg.gauss.d = g["d"];
    if (g.contains("n_train")) cfg.gauss.n_train = g["n_train"];
    if (g.contains("n_test")) cfg.gauss.n_test = g["n_test"];
    if (g.contains("nval_grid")) {
      cfg.gauss_nval_grid = g["nval_grid"].get<std::vector<std::size_t>>();
    }
  }
  if (j.contains("sinusoid")) {
    const auto& s = j["sinusoid"];
    if (s.contains("k")) cfg.sinusoid.k = s["k"];
    if (s.contains("n_train")) cfg.sinusoid.n_train = s["n_train"];
    if (s.contains("n_test")) cfg.sinusoid.n_test = s["n_test"];
    if (s.contains("nval_grid")) {
      cfg.sinusoid_nval_grid = s["nval_grid"].get<std::vector<std::size_t>>();
    }
  }
  if (j.contains("slices")) {
    const auto& s = j["slices"];
    if (s.contains("d")) cfg.slice.d = s["d"];
    if (s.contains("d0")) cfg.slice.d0 = s["d0"];
    if (s.contains("n_classes")) cfg.slice.n_classes = s["n_classes"];
    if (s.contains("n_val")) cfg.slice.n_val = s["n_val"];
    if (s.contains("n_test")) cfg.slice.n_test = s["n_test"];
  }
}

// Writes the trial-0 datasets of the configured experiment as CSV for
// external inspection.
void dump_datasets(const ExperimentConfig& cfg, const std::string& prefix) {
  auto dump = [&](const Dataset& ds, const std::string& split) {
    atomic_write_file(prefix + "_" + split + ".csv",
                      dataset_to_csv(ds, split));
  };
  switch (cfg.experiment) {
    case ExperimentKind::gaussian_linreg: {
      GaussianLinregConfig gc = cfg.gauss;
      gc.seed = cfg.seed;
      if (!cfg.gauss_nval_grid.empty()) gc.n_val = cfg.gauss_nval_grid[0];
      const auto data = gen_gaussian_linreg(gc);
      dump(data.train, "train");
      dump(data.val, "val");
      dump(data.test, "test");
      break;
    }
    case ExperimentKind::sinusoid: {
      SinusoidConfig sc = cfg.sinusoid;
      sc.seed = cfg.seed;
      if (!cfg.sinusoid_nval_grid.empty()) sc.n_val = cfg.sinusoid_nval_grid[0];
      const auto data = gen_sinusoid(sc);
      dump(data.train, "train");
      dump(data.val, "val");
      dump(data.test, "test");
      break;
    }
    case ExperimentKind::slices: {
      SliceConfig sc = cfg.slice;
      sc.seed = cfg.seed;
      const auto data = gen_slice_data(sc);
      dump(data.val, "val");
      dump(data.test, "test");
      break;
    }
    default:
      throw invalid_input_error("bound-verify has no datasets to dump");
  }
}

int cmd_simulate(ExperimentConfig cfg, const std::string& config_path,
                 const std::vector<std::string>& method_tokens,
                 const std::string& summary_path,
                 const std::string& dump_prefix) {
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw invalid_input_error("cannot open config: " + config_path);
    nlohmann::json j;
    in >> j;
    apply_json_config(j, cfg);
  }
  if (!method_tokens.empty()) {
    cfg.methods.clear();
    for (const auto& tok : method_tokens) {
      cfg.methods.push_back(parse_method_spec(tok, cfg.correction));
    }
  }
  if (!dump_prefix.empty()) dump_datasets(cfg, dump_prefix);
  if (cfg.methods.empty()) {
    // sensible per-experiment defaults
    switch (cfg.experiment) {
      case ExperimentKind::sinusoid:
        cfg.methods = {parse_method_spec("two-sided:scaling",
                                         cfg.correction)};
        break;
      case ExperimentKind::slices:
        cfg.methods = {parse_method_spec("static", cfg.correction),
                       parse_method_spec("adaptive", cfg.correction),
                       parse_method_spec("full-grid", cfg.correction)};
        break;
      default:
        cfg.methods = {parse_method_spec("static", cfg.correction),
                       parse_method_spec("adaptive", cfg.correction)};
        break;
    }
  }
  const auto records = run_experiment(cfg);
  if (!cfg.output_path.empty()) {
    write_records_csv(records, cfg.output_path);
    std::cout << "wrote " << records.size() << " records: " << cfg.output_path
              << "\n";
  }
  const auto summary = emit_summary(records);
  if (!summary_path.empty()) {
    write_summary_csv(summary, summary_path);
    std::cout << "wrote summary: " << summary_path << "\n";
  }
  for (const auto& row : summary) {
    std::cout << row.method << " " << row.group << " n_val=" << row.n_val
              << " coverage=" << format_double(row.coverage_mean) << " (sd "
              << format_double(row.coverage_std) << ")\n";
  }
  return kExitOk;
}

int cmd_bounds(const std::string& kind, std::size_t n, std::size_t d,
               double alpha, double delta, double gamma, double t,
               double group_mass, double b_phi, double b_phi_u, double mean_w,
               double c) {
  if (kind == "hoeffding") {
    std::cout << "failure_prob=" << format_double(hoeffding_failure_prob(n, gamma))
              << "\ngamma(delta)=" << format_double(hoeffding_gamma(n, delta))
              << "\n";
  } else if (kind == "bernstein") {
    const auto g = bernstein_gamma(n, alpha, delta);
    std::cout << "gamma_n(delta)=" << format_double(g.gamma)
              << "\nupper_bound=" << format_double(g.upper_bound) << "\n";
  } else if (kind == "dkw") {
    std::cout << "t(delta)=" << format_double(dkw_deviation(n, delta)) << "\n";
  } else if (kind == "group") {
    std::cout << "deviation="
              << format_double(group_coverage_deviation(n, d, t, group_mass))
              << "\n";
  } else if (kind == "sharp") {
    const auto b = sharp_weighted_bound(n, d, alpha, t, b_phi, b_phi_u,
                                        mean_w, c);
    std::cout << "one_sided=" << format_double(b.one_sided)
              << "\ntwo_sided=" << format_double(b.two_sided)
              << "\nk_n=" << format_double(b.k_n)
              << "\nfailure_prob=" << format_double(b.failure_prob)
              << "\nc=" << format_double(b.c) << "\n";
  } else {
    throw invalid_input_error("unknown bound kind '" + kind + "'");
  }
  return kExitOk;
}

int cmd_verify(const std::string& kind, VerifyConfig vc) {
  vc.kind = verify_kind_from_string(kind);
  const VerifyVerdict v = verify_bound(vc);
  std::cout << "kind=" << kind << " trials=" << v.trials
            << " violations=" << v.violations
            << " violation_rate=" << format_double(v.violation_rate)
            << " nominal=" << format_double(v.nominal_rate)
            << " threshold=" << format_double(v.threshold)
            << " pass=" << (v.pass ? "yes" : "no") << "\n";
  return v.pass ? kExitOk : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"split-conformal calibration, coverage diagnostics, and "
               "Monte Carlo bound verification"};
  app.require_subcommand(1);

  // calibrate
  std::string cal_in, cal_out = "rule.json", cal_method = "adaptive";
  std::string cal_corr = "none";
  double cal_alpha = 0.1, cal_jitter = 0.0;
  std::uint64_t cal_seed = 1;
  auto* cal = app.add_subcommand("calibrate",
                                 "fit a rule from a scores CSV, write rule "
                                 "JSON");
  cal->add_option("--in", cal_in, "scores CSV (phi0..phiK columns optional)")
      ->required();
  cal->add_option("--out", cal_out, "output rule JSON path");
  cal->add_option("--alpha", cal_alpha, "desired miscoverage level");
  cal->add_option("--method", cal_method,
                  "static | static-plain | adaptive | two-sided");
  cal->add_option("--correction", cal_corr, "none | naive | scaling");
  cal->add_option("--jitter-scale", cal_jitter,
                  "jitter scale for adaptive fits (0 disables)");
  cal->add_option("--seed", cal_seed, "jitter seed");

  // evaluate
  std::string eval_rule, eval_test, eval_out = "coverage.csv";
  bool eval_json = false;
  auto* eval = app.add_subcommand("evaluate",
                                  "rule JSON + test CSV -> coverage report "
                                  "CSV");
  eval->add_option("--rule", eval_rule, "rule JSON path")->required();
  eval->add_option("--test", eval_test, "test CSV path")->required();
  eval->add_option("--out", eval_out, "coverage report CSV path");
  eval->add_flag("--json", eval_json, "also write <out>.json");

  // simulate
  ExperimentConfig sim_cfg;
  std::string sim_experiment = "gaussian-linreg", sim_config, sim_corr = "none";
  std::string sim_summary, sim_dump;
  std::vector<std::string> sim_methods;
  auto* sim = app.add_subcommand("simulate",
                                 "run a synthetic experiment, emit records "
                                 "CSV");
  sim->add_option("experiment", sim_experiment,
                  "gaussian-linreg | sinusoid | slices | bound-verify");
  sim->add_option("--config", sim_config, "JSON config file");
  sim->add_option("--trials", sim_cfg.trials, "number of trials");
  sim->add_option("--alpha", sim_cfg.alpha_des, "desired miscoverage");
  sim->add_option("--correction", sim_corr, "default correction");
  sim->add_option("--methods", sim_methods,
                  "method[:correction] tokens (repeatable)");
  sim->add_option("--seed", sim_cfg.seed, "master seed");
  sim->add_option("--out", sim_cfg.output_path, "records CSV path");
  sim->add_option("--summary", sim_summary, "summary CSV path");
  sim->add_option("--threads", sim_cfg.threads, "worker threads (0 = auto)");
  sim->add_option("--dump-data", sim_dump,
                  "write trial-0 datasets as <prefix>_<split>.csv");

  // bounds
  std::string bound_kind;
  std::size_t b_n = 1000, b_d = 10;
  double b_alpha = 0.1, b_delta = 0.05, b_gamma = 0.05, b_t = 0.0;
  double b_mass = 0.2, b_bphi = 1.0, b_bphiu = 1.0, b_meanw = 0.5, b_c = 1.0;
  auto* bounds = app.add_subcommand("bounds", "print bound values");
  bounds->add_option("kind", bound_kind,
                     "hoeffding | bernstein | dkw | group | sharp")
      ->required();
  bounds->add_option("--n", b_n, "sample size");
  bounds->add_option("--d", b_d, "dimension / group count");
  bounds->add_option("--alpha", b_alpha, "miscoverage level");
  bounds->add_option("--delta", b_delta, "failure probability");
  bounds->add_option("--gamma", b_gamma, "coverage slack");
  bounds->add_option("--t", b_t, "tail parameter");
  bounds->add_option("--group-mass", b_mass, "P(X in G)");
  bounds->add_option("--b-phi", b_bphi, "sup-norm bound on phi");
  bounds->add_option("--b-phi-u", b_bphiu, "sup |<u,phi(x)>|");
  bounds->add_option("--mean-w", b_meanw, "E[<u, phi(X)>]");
  bounds->add_option("--c", b_c, "bound-up-to-constant multiplier");

  // verify
  std::string verify_kind;
  VerifyConfig vc;
  auto* verify = app.add_subcommand("verify",
                                    "Monte Carlo verification of a stated "
                                    "bound");
  verify->add_option("kind", verify_kind,
                     "prop2 | prop3 | corollary1 | corollary3 | lemma8")
      ->required();
  verify->add_option("--trials", vc.trials, "Monte Carlo trials");
  verify->add_option("--n", vc.n, "calibration size per trial");
  verify->add_option("--alpha", vc.alpha, "miscoverage level");
  verify->add_option("--gamma", vc.gamma, "slack (prop2 / corollary1)");
  verify->add_option("--delta", vc.delta, "failure probability (prop3)");
  verify->add_option("--t", vc.t, "tail parameter (corollary3)");
  verify->add_option("--d", vc.d, "group count (corollary3)");
  verify->add_flag("--two-sided", vc.two_sided, "prop3: two-sided violations");
  verify->add_option("--seed", vc.seed, "master seed");
  verify->add_option("--threads", vc.threads, "worker threads (0 = auto)");

  try {
    app.parse(argc, argv);

    if (cal->parsed()) {
      return cmd_calibrate(cal_in, cal_out, cal_alpha, cal_method, cal_corr,
                           cal_jitter, cal_seed);
    }
    if (eval->parsed()) {
      return cmd_evaluate(eval_rule, eval_test, eval_out, eval_json);
    }
    if (sim->parsed()) {
      sim_cfg.experiment = experiment_kind_from_string(sim_experiment);
      sim_cfg.correction = correction_from_string(sim_corr);
      return cmd_simulate(sim_cfg, sim_config, sim_methods, sim_summary,
                          sim_dump);
    }
    if (bounds->parsed()) {
      return cmd_bounds(bound_kind, b_n, b_d, b_alpha, b_delta, b_gamma, b_t,
                        b_mass, b_bphi, b_bphiu, b_meanw, b_c);
    }
    if (verify->parsed()) {
      return cmd_verify(verify_kind, vc);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadConfig;
  } catch (const infeasible_correction_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const invalid_input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadConfig;
  }
  return kExitOk;
}
