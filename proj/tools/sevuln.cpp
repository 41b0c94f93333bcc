// sevuln: measurement vulnerability assessment for WLS state estimation.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sevuln/errors.hpp"
#include "sevuln/estimator.hpp"
#include "sevuln/measurements.hpp"
#include "sevuln/network.hpp"
#include "sevuln/report.hpp"
#include "sevuln/robustness.hpp"
#include "sevuln/scoring.hpp"
#include "sevuln/validation.hpp"

namespace {

using namespace sevuln;

enum ExitCode {
  kOk = 0,
  kOther = 1,
  kInput = 2,
  kRegular = 3,
  kConverge = 4,
  kDegenerateExit = 5,
  kBreach = 6,
};

int exit_code_for(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::kParse:
    case ErrorClass::kValidation:
    case ErrorClass::kDomain: return kInput;
    case ErrorClass::kRegularity: return kRegular;
    case ErrorClass::kConvergence: return kConverge;
    case ErrorClass::kDegenerate: return kDegenerateExit;
    case ErrorClass::kShape: return kOther;
  }
  return kOther;
}

struct CommonArgs {
  std::string case_path;
  std::string meas_path;
  std::uint64_t seed = 1;
  double noise = 1.0;
  double gamma = 10.0;
  double alpha = 0.3;
  double beta_s = 1.0;
  double beta_l = 1.5;
  std::string norm = "l2";
  double threshold = 0.9;
  double tol = 1e-9;
  int max_iter = 50;
  double damping = 0.0;
  double significance = 0.05;
  bool consistent = false;
  bool emit_matrices = false;
  std::string out = "sevuln_out";
  int top = 10;
};

struct SweepArgs {
  std::vector<double> factors;
  bool factors_default = false;
  bool ce_squared = false;
  int jobs = 1;
  std::size_t rank = 1;
  std::size_t rank_j = 0;
  double energy_threshold = 0.8;
  std::string seed_policy = "common";
  std::string cache_dir;
};

struct ValidateArgs {
  double step = 1e-5;
  double fd_tol = 1e-4;
  std::size_t sample = 0;
  bool all_factors = false;
  double fault_scale = 1.0;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--case", a.case_path, "MATPOWER-style case file")->required();
  cmd->add_option("--meas", a.meas_path, "measurement configuration (JSON)")->required();
  cmd->add_option("--seed", a.seed, "noise seed")->capture_default_str();
  cmd->add_option("--noise", a.noise, "noise sigma scale (sigma_l = scale / sqrt(w_l))")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--gamma", a.gamma, "S-score base")->capture_default_str();
  cmd->add_option("--alpha", a.alpha, "V-score weight on the S-score")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--beta-s", a.beta_s, "S-score shape exponent")->capture_default_str();
  cmd->add_option("--beta-l", a.beta_l, "L-score shape exponent")->capture_default_str();
  cmd->add_option("--norm", a.norm, "column norm for the L-score")
      ->capture_default_str()
      ->check(CLI::IsMember({"l2", "linf"}));
  cmd->add_option("--threshold", a.threshold, "V-score threshold for the vulnerable set")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--tol", a.tol, "KKT residual tolerance")->capture_default_str();
  cmd->add_option("--max-iter", a.max_iter, "Newton iteration limit")->capture_default_str();
  cmd->add_option("--damping", a.damping, "initial Levenberg damping")->capture_default_str();
  cmd->add_option("--significance", a.significance, "chi-square test significance")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_flag("--consistent", a.consistent,
                "noiseless data; S-score from the second-order surrogate");
  cmd->add_flag("--emit-matrices", a.emit_matrices, "also write sensitivity matrices");
  cmd->add_option("--out", a.out, "output directory")->capture_default_str();
  cmd->add_option("--top", a.top, "rows shown in the stdout table")->capture_default_str();
}

ScoreParams score_params(const CommonArgs& a) {
  ScoreParams p;
  p.gamma = a.gamma;
  p.alpha = a.alpha;
  p.beta_s = a.beta_s;
  p.beta_l = a.beta_l;
  p.norm = a.norm == "linf" ? NormKind::kInf : NormKind::kTwo;
  p.validate();
  return p;
}

SolverOptions solver_options(const CommonArgs& a) {
  SolverOptions s;
  s.tol = a.tol;
  s.max_iter = a.max_iter;
  s.damping = a.damping;
  return s;
}

nlohmann::ordered_json common_params(const CommonArgs& a) {
  nlohmann::ordered_json j;
  j["seed"] = a.seed;
  j["noise"] = a.consistent ? 0.0 : a.noise;
  j["consistent"] = a.consistent;
  j["gamma"] = a.gamma;
  j["alpha"] = a.alpha;
  j["beta_s"] = a.beta_s;
  j["beta_l"] = a.beta_l;
  j["norm"] = a.norm;
  j["threshold"] = a.threshold;
  j["tol"] = a.tol;
  j["max_iter"] = a.max_iter;
  j["damping"] = a.damping;
  j["significance"] = a.significance;
  return j;
}

struct Inputs {
  Network net;
  MeasurementConfig cfg;
  RunManifest manifest;
};

Inputs load_inputs(const std::string& command, const CommonArgs& a) {
  const std::string case_text = read_file(a.case_path);
  const std::string meas_text = read_file(a.meas_path);
  Network net = parse_case(case_text);
  MeasurementConfig cfg = parse_measurement_config(meas_text, net);
  RunManifest m;
  m.command = command;
  m.case_path = a.case_path;
  m.case_hash = hex64(fnv1a64(case_text));
  m.meas_path = a.meas_path;
  m.meas_hash = hex64(fnv1a64(meas_text));
  m.params = common_params(a);
  m.timestamp = utc_timestamp();
  return {std::move(net), std::move(cfg), std::move(m)};
}

void write_bundle(const OutputBundle& bundle, const RunManifest& manifest, const std::string& dir) {
  auto hashes = bundle.write(dir);
  OutputBundle m;
  m.add("manifest.json", manifest.to_json(hashes).dump(2) + "\n");
  m.write(dir);
}

void print_scores(const ScoreTable& table, const Ranking& ranking, int top, double threshold) {
  std::printf("%-5s %-14s %9s %9s %9s\n", "rank", "measurement", "S-score", "L-score", "V-score");
  int shown = 0;
  for (std::size_t idx : ranking.order) {
    if (shown++ >= top) break;
    const ScoreRow& r = table.rows[idx];
    std::printf("%-5d %-14s %9.4f %9.4f %9.4f\n", r.rank, r.id.c_str(), r.s_score, r.l_score,
                r.v_score);
  }
  std::printf("vulnerable (V >= %g):", threshold);
  if (ranking.vulnerable.empty()) std::printf(" none");
  for (std::size_t idx : ranking.vulnerable) std::printf(" %s", table.rows[idx].id.c_str());
  std::printf("\n");
}

int cmd_assess(const CommonArgs& a) {
  Inputs in = load_inputs("assess", a);
  const ScoreParams params = score_params(a);
  const MeasurementSet ms =
      synthesize_measurements(in.net, in.cfg, a.consistent ? 0.0 : a.noise, a.seed);
  const EstimationProblem problem(in.net, ms);
  const EstimationResult est = estimate_state(problem, solver_options(a));
  const AssessmentResult res = run_algorithm_1(
      problem, est, params, a.consistent ? StealthInput::kSurrogate : StealthInput::kResidual);
  const Ranking ranking = rank_measurements(res.table, a.threshold);
  const Redundancy red = redundancy(in.net, ms);

  nlohmann::ordered_json summary;
  summary["measurements"] = red.measurements;
  summary["zero_injection_constraints"] = red.zero_constraints;
  summary["states"] = red.states;
  summary["redundancy_ratio"] = red.ratio;
  summary["j_star"] = est.j_star;
  summary["iterations"] = est.iterations;
  summary["kkt_residual"] = est.kkt_residual;
  summary["kkt_rcond"] = res.sensitivities.condition_estimate;
  if (red.dof >= 1) {
    const BddResult bdd =
        bdd_chi_square(est.j_star, red.measurements, red.states, red.zero_constraints,
                       a.significance);
    summary["bdd"] = {{"dof", bdd.dof}, {"threshold", bdd.threshold}, {"detected", bdd.detected}};
    std::printf("J* = %.6g  chi2 threshold (dof %ld, %.3g) = %.4f  bad data: %s\n", est.j_star,
                bdd.dof, a.significance, bdd.threshold, bdd.detected ? "yes" : "no");
  } else {
    std::printf("J* = %.6g  (no redundancy for a chi-square test)\n", est.j_star);
  }
  if (a.consistent) std::printf("stealth input: second-order surrogate (consistent data)\n");
  print_scores(res.table, ranking, a.top, a.threshold);

  const std::string id = in.manifest.id();
  OutputBundle bundle;
  bundle.add("scores.csv", scores_csv(res.table, id));
  nlohmann::ordered_json sj = scores_json(res.table);
  sj["manifest_id"] = id;
  sj["summary"] = summary;
  nlohmann::ordered_json vul = nlohmann::ordered_json::array();
  for (std::size_t idx : ranking.vulnerable) vul.push_back(res.table.rows[idx].id);
  sj["vulnerable"] = vul;
  bundle.add("scores.json", sj.dump(2) + "\n");
  if (a.emit_matrices) {
    std::vector<std::string> ids;
    for (const auto& r : res.table.rows) ids.push_back(r.id);
    bundle.add("dx_dz.csv", matrix_csv(res.sensitivities.dx_dz, problem.variable_names(), ids, id));
    bundle.add("dlambda_dz.csv", matrix_csv(res.sensitivities.dlambda_dz,
                                            problem.constraint_names(), ids, id));
    bundle.add("dJ_dz.csv",
               matrix_csv(res.sensitivities.dj_dz.transpose(), {"J"}, ids, id));
  }
  write_bundle(bundle, in.manifest, a.out);
  return kOk;
}

int cmd_sweep(const CommonArgs& a, const SweepArgs& s) {
  std::vector<double> factors = s.factors;
  if (s.factors_default || factors.empty()) factors = default_scale_factors();
  if (factors.size() < 2) throw ValidationError("a sweep needs at least two scale factors");
  for (double f : factors) {
    if (!(f > 0.0)) throw DomainError("scale factors must be positive");
  }
  if (s.seed_policy != "common" && s.seed_policy != "per-condition") {
    throw ValidationError("unknown seed policy: " + s.seed_policy);
  }

  Inputs in = load_inputs("sweep", a);
  in.manifest.params["factors"] = factors;
  in.manifest.params["seed_policy"] = s.seed_policy;
  in.manifest.params["ce_squared"] = s.ce_squared;
  const std::size_t rank_j = s.rank_j ? s.rank_j : s.rank;
  in.manifest.params["rank_x"] = s.rank;
  in.manifest.params["rank_j"] = rank_j;
  in.manifest.params["energy_threshold"] = s.energy_threshold;

  SweepOptions o;
  o.noise_scale = a.noise;
  o.base_seed = a.seed;
  o.seed_policy = s.seed_policy == "common" ? SeedPolicy::kCommon : SeedPolicy::kPerCondition;
  o.input = a.consistent ? StealthInput::kSurrogate : StealthInput::kResidual;
  o.score = score_params(a);
  o.solver = solver_options(a);
  o.jobs = s.jobs;
  std::optional<SensitivityCache> cache;
  if (!s.cache_dir.empty()) {
    const std::string params_hash = hex64(fnv1a64(common_params(a).dump()));
    cache.emplace(s.cache_dir, in.manifest.case_hash, in.manifest.meas_hash, params_hash);
    o.cache_get = [&](double f, std::uint64_t seed) { return cache->get(f, seed); };
    o.cache_put = [&](double f, std::uint64_t seed, const ConditionSensitivities& v) {
      cache->put(f, seed, v);
    };
  }

  const SensitivityEnsemble ens = sweep_operating_conditions(in.net, in.cfg, factors, o);
  std::size_t failed = 0;
  for (const auto& c : ens.conditions) {
    if (!c.ok) {
      ++failed;
      std::fprintf(stderr, "condition factor %g failed: %s\n", c.factor, c.error.c_str());
    }
  }
  const SvdReport report = svd_analysis(ens, s.ce_squared);
  const InvarianceVerdict verdict =
      invariance_verdict(report, s.rank, rank_j, s.energy_threshold);

  std::printf("conditions: %zu requested, %zu succeeded\n", factors.size(),
              factors.size() - failed);
  std::printf("X: %ld x %ld   J: %ld x %ld\n", static_cast<long>(ens.x_matrix.rows()),
              static_cast<long>(ens.x_matrix.cols()), static_cast<long>(ens.j_matrix.rows()),
              static_cast<long>(ens.j_matrix.cols()));
  std::printf("%-4s %12s %8s %12s %8s\n", "r", "sigma_x", "CE_x", "sigma_j", "CE_j");
  const Eigen::Index shown = std::min<Eigen::Index>(5, report.sigma_x.size());
  for (Eigen::Index i = 0; i < shown; ++i) {
    std::printf("%-4ld %12.5g %8.4f %12.5g %8.4f\n", static_cast<long>(i + 1),
                report.sigma_x(i), report.ce_x(i),
                i < report.sigma_j.size() ? report.sigma_j(i) : 0.0,
                i < report.ce_j.size() ? report.ce_j(i) : 1.0);
  }
  std::printf("verdict: %s (CE_x(%zu) = %.4f, CE_j(%zu) = %.4f, threshold %g)\n",
              verdict.invariant ? "invariant" : "not invariant", s.rank, verdict.ce_x, rank_j,
              verdict.ce_j, s.energy_threshold);

  const std::string id = in.manifest.id();
  OutputBundle bundle;
  bundle.add("svd_report.csv", svd_csv(report, id));
  nlohmann::ordered_json vj = verdict_json(verdict, report, rank_j);
  vj["manifest_id"] = id;
  bundle.add("verdict.json", vj.dump(2) + "\n");
  std::string summary = "# manifest " + id + "\nfactor,seed,status,j_star,error\n";
  for (std::size_t k = 0; k < ens.conditions.size(); ++k) {
    const ConditionOutcome& c = ens.conditions[k];
    summary += format_double(c.factor) + "," + std::to_string(c.seed) + "," +
               (c.ok ? "ok" : "failed") + "," + (c.ok ? format_double(c.result.j_star) : "") +
               ",\"" + c.error + "\"\n";
    if (c.ok) {
      char name[64];
      std::snprintf(name, sizeof name, "conditions/scores_%02zu.csv", k + 1);
      bundle.add(name, scores_csv(c.result.table, id));
    }
  }
  bundle.add("conditions.csv", summary);
  if (a.emit_matrices) {
    std::vector<std::string> rows;
    for (double f : ens.factors) rows.push_back(format_double(f));
    std::vector<std::string> xcols;
    for (std::size_t c = 0; c < ens.n * ens.p; ++c) {
      const auto [i, l] = ens.column_index(c);
      xcols.push_back(ens.variable_names[i] + "/" + ens.measurement_ids[l]);
    }
    bundle.add("x_matrix.csv", matrix_csv(ens.x_matrix, rows, xcols, id));
    bundle.add("j_matrix.csv", matrix_csv(ens.j_matrix, rows, ens.measurement_ids, id));
  }
  write_bundle(bundle, in.manifest, a.out);
  return kOk;
}

int cmd_validate(const CommonArgs& a, const ValidateArgs& v) {
  Inputs in = load_inputs("validate", a);
  in.manifest.params["step"] = v.step;
  in.manifest.params["fd_tol"] = v.fd_tol;
  in.manifest.params["sample"] = v.sample;
  in.manifest.params["all_factors"] = v.all_factors;

  ValidationOptions o;
  o.noise_scale = a.noise > 0.0 ? a.noise : 1.0;
  o.seed = a.seed;
  if (v.all_factors) o.noiseless_factors = default_scale_factors();
  o.fd_step = v.step;
  o.fd_tol = v.fd_tol;
  o.fd_sample = v.sample;
  o.solver = solver_options(a);
  if (v.fault_scale != 1.0) o.assembly.fault = AssemblyFault{v.fault_scale};

  const ValidationReport rep = run_validation(in.net, in.cfg, o);
  std::printf("%-42s %12s %12s  %s\n", "check", "value", "tolerance", "result");
  for (const auto& c : rep.checks) {
    std::printf("%-42s %12.4g %12.4g  %s%s%s\n", c.name.c_str(), c.value, c.tolerance,
                c.pass ? "ok" : "FAIL", c.detail.empty() ? "" : "  ", c.detail.c_str());
  }
  if (!rep.passed()) {
    std::fprintf(stderr, "validation failed\n");
    return kBreach;
  }

  nlohmann::ordered_json j;
  j["manifest_id"] = in.manifest.id();
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  for (const auto& c : rep.checks) {
    checks.push_back({{"name", c.name},
                      {"value", c.value},
                      {"tolerance", c.tolerance},
                      {"pass", c.pass},
                      {"detail", c.detail}});
  }
  j["checks"] = checks;
  OutputBundle bundle;
  bundle.add("validation.json", j.dump(2) + "\n");
  write_bundle(bundle, in.manifest, a.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measurement vulnerability assessment for WLS power system state estimation"};
  app.set_version_flag("--version", std::string(sevuln::kVersion));
  app.require_subcommand(1);

  CommonArgs assess_args, sweep_args, validate_args;
  SweepArgs sweep_extra;
  ValidateArgs validate_extra;

  auto* assess = app.add_subcommand("assess", "score every measurement at one operating condition");
  add_common(assess, assess_args);

  auto* sweep = app.add_subcommand("sweep", "sweep load scale factors and test invariance");
  add_common(sweep, sweep_args);
  sweep->add_option("--factors", sweep_extra.factors, "demand scale factors");
  sweep->add_flag("--factors-default", sweep_extra.factors_default,
                  "24 factors evenly spaced on [0.55, 1.15]");
  sweep->add_flag("--ce-squared", sweep_extra.ce_squared,
                  "cumulative energy from squared singular values");
  sweep->add_option("--jobs", sweep_extra.jobs, "parallel operating conditions")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sweep->add_option("--rank", sweep_extra.rank, "rank r for the verdict")->capture_default_str();
  sweep->add_option("--rank-j", sweep_extra.rank_j, "rank for the J matrix (default: --rank)");
  sweep->add_option("--energy-threshold", sweep_extra.energy_threshold,
                    "cumulative-energy threshold")
      ->capture_default_str();
  sweep->add_option("--seed-policy", sweep_extra.seed_policy,
                    "noise seeds across conditions: common | per-condition")
      ->capture_default_str()
      ->check(CLI::IsMember({"common", "per-condition"}));
  sweep->add_option("--cache", sweep_extra.cache_dir, "sensitivity cache directory");

  auto* validate = app.add_subcommand("validate", "finite-difference and consistency oracles");
  add_common(validate, validate_args);
  validate->add_option("--step", validate_extra.step, "finite-difference step")
      ->capture_default_str();
  validate->add_option("--fd-tol", validate_extra.fd_tol, "finite-difference tolerance")
      ->capture_default_str();
  validate->add_option("--sample", validate_extra.sample,
                       "measurements to perturb (0: all if p <= 20, else 10)")
      ->capture_default_str();
  validate->add_flag("--all-factors", validate_extra.all_factors,
                     "noiseless check at all 24 default scale factors");
  validate->add_option("--fault-jacobian-scale", validate_extra.fault_scale)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInput;
  }

  try {
    if (*assess) return cmd_assess(assess_args);
    if (*sweep) return cmd_sweep(sweep_args, sweep_extra);
    if (*validate) return cmd_validate(validate_args, validate_extra);
  } catch (const sevuln::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.error_class());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOther;
}
