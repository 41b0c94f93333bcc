#include "sevuln/validation.hpp"

#include <algorithm>
#include <cmath>

namespace sevuln {

bool ValidationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
}

double symmetry_defect(const Eigen::MatrixXd& h) {
  return (h - h.transpose()).cwiseAbs().maxCoeff();
}

double solve_residual(const KktBlocks& b, const SensitivityResult& sens) {
  Eigen::MatrixXd m(sens.dx_dz.rows() + sens.dlambda_dz.rows(), sens.dx_dz.cols());
  m << sens.dx_dz, sens.dlambda_dz;
  return (b.h_x * m + b.h_z).cwiseAbs().maxCoeff();
}

double dj_identity_gap(const EstimationProblem& problem, const EstimationResult& est,
                       const SensitivityResult& sens) {
  const MeasurementSet& ms = problem.measurements();
  const auto& var = problem.layout().measured_var;
  Eigen::VectorXd jx = Eigen::VectorXd::Zero(est.x_star.size());
  Eigen::VectorXd jz(static_cast<Eigen::Index>(ms.size()));
  for (std::size_t l = 0; l < ms.size(); ++l) {
    const Measurement& m = ms.at(l);
    const double resid = m.value - est.x_star(var[l]);
    jz(static_cast<Eigen::Index>(l)) = 2.0 * m.weight * resid;
    jx(var[l]) -= 2.0 * m.weight * resid;
  }
  double gap = 0.0;
  for (Eigen::Index l = 0; l < jz.size(); ++l) {
    const double rebuilt = jz(l) + jx.dot(sens.dx_dz.col(l));
    gap = std::max(gap, std::abs(rebuilt - sens.dj_dz(l)) / std::max(1.0, std::abs(rebuilt)));
  }
  return gap;
}

namespace {

ValidationCheck check(std::string name, double value, double tol, std::string detail = {}) {
  return {std::move(name), value, tol, value <= tol, std::move(detail)};
}

}  // namespace

ValidationReport run_validation(const Network& net, const MeasurementConfig& cfg,
                                const ValidationOptions& opts) {
  ValidationReport rep;

  for (double f : opts.noiseless_factors) {
    const Network scaled = scale_demands(net, f);
    const MeasurementSet ms = synthesize_measurements(scaled, cfg, 0.0, opts.seed);
    const EstimationResult est = estimate_state(scaled, ms, opts.solver);
    const StateVector& truth = *ms.truth();
    const double err = std::max((est.state.v - truth.v).lpNorm<Eigen::Infinity>(),
                                (est.state.theta - truth.theta).lpNorm<Eigen::Infinity>());
    char tag[64];
    std::snprintf(tag, sizeof tag, " (factor %g)", f);
    rep.checks.push_back(check(std::string("noiseless J*") + tag, est.j_star, opts.noiseless_j_tol));
    rep.checks.push_back(
        check(std::string("noiseless state error") + tag, err, opts.noiseless_state_tol));
  }

  const MeasurementSet ms = synthesize_measurements(net, cfg, opts.noise_scale, opts.seed);
  for (const Measurement& m : ms.measurements()) rep.measurement_ids.push_back(measurement_label(net, m));
  const EstimationProblem problem(net, ms);
  const EstimationResult est = estimate_state(problem, opts.solver);
  const KktBlocks blocks = assemble_kkt_blocks(problem, est, opts.assembly);
  const SensitivityResult sens = measurement_sensitivities(blocks);

  rep.checks.push_back(check("H_x symmetry", symmetry_defect(blocks.h_x), opts.symmetry_tol));
  rep.checks.push_back(
      check("sensitivity solve residual", solve_residual(blocks, sens), opts.solve_residual_tol));
  rep.checks.push_back(
      check("dJ/dz identity", dj_identity_gap(problem, est, sens), opts.identity_tol));

  FdOptions fo;
  fo.step = opts.fd_step;
  fo.abs_floor = opts.fd_abs_floor;
  const std::size_t p = ms.size();
  const std::size_t k = opts.fd_sample ? opts.fd_sample : (p <= 20 ? p : 10);
  fo.sample = even_sample(p, k);
  rep.fd = finite_difference_check(problem, est, sens, fo);
  const std::string worst =
      rep.measurement_ids.empty() ? "" : "worst " + rep.measurement_ids[rep.fd.worst_measurement];
  rep.checks.push_back(check("FD dx/dz relative error", rep.fd.max_dx_rel, opts.fd_tol, worst));
  rep.checks.push_back(check("FD dJ/dz relative error", rep.fd.max_dj_rel, opts.fd_tol, worst));
  rep.checks.push_back(
      check("FD dJ/dz absolute error (small entries)", rep.fd.max_dj_abs, opts.fd_abs_floor));
  rep.checks.push_back(check("FD re-solve failures", static_cast<double>(rep.fd.failed_solves), 0.0));
  if (rep.fd.roundoff_warning || rep.fd.truncation_warning) {
    rep.checks.back().detail =
        rep.fd.roundoff_warning ? "step dominated by round-off" : "step dominated by truncation";
  }
  return rep;
}

}  // namespace sevuln
