#include "sevuln/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sevuln/errors.hpp"
#include "sevuln/kkt_factor.hpp"

namespace sevuln {

KktBlocks assemble_kkt_blocks(const EstimationProblem& problem, const EstimationResult& est,
                              const AssemblyOptions& opts) {
  const KktResidual res = kkt_residual(problem, est.x_star, est.lambda_star);
  const double worst = std::max(res.stationarity, res.feasibility);
  if (!(worst <= opts.max_kkt_residual)) {
    throw StalePointError("estimate is not a KKT point (residual " + std::to_string(worst) +
                          " > " + std::to_string(opts.max_kkt_residual) + ")");
  }

  const auto n = static_cast<Eigen::Index>(problem.num_vars());
  const auto r = static_cast<Eigen::Index>(problem.num_constraints());
  const auto p = static_cast<Eigen::Index>(problem.num_measurements());
  const Eigen::VectorXd& x = est.x_star;
  const MeasurementSet& ms = problem.measurements();
  const std::vector<int>& var = problem.layout().measured_var;

  KktBlocks b;
  b.j_x = problem.objective_gradient(x);
  b.j_z.resize(p);
  b.j_a.resize(p);
  b.j_xz = Eigen::MatrixXd::Zero(n, p);
  b.j_xa = Eigen::MatrixXd::Zero(n, p);
  for (Eigen::Index l = 0; l < p; ++l) {
    const Measurement& m = ms.at(static_cast<std::size_t>(l));
    const int k = var[static_cast<std::size_t>(l)];
    const double resid = m.value - x(k);
    b.j_z(l) = 2.0 * m.weight * resid;
    b.j_a(l) = resid * resid;
    b.j_xz(k, l) = -2.0 * m.weight;
    b.j_xa(k, l) = -2.0 * resid;
  }
  b.j_xx = problem.lagrangian_hessian(x, est.lambda_star);
  b.c_x = problem.constraint_jacobian(x);
  if (opts.fault) {
    const VarMap& map = problem.layout().bus_map;
    for (std::size_t bus = 0; bus < map.v_pos.size(); ++bus) {
      b.c_x.col(map.v_pos[bus]) *= opts.fault->jacobian_scale;
      if (map.theta_pos[bus] >= 0) b.c_x.col(map.theta_pos[bus]) *= opts.fault->jacobian_scale;
    }
  }
  b.c_a = Eigen::MatrixXd::Zero(r, p);

  if (r > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(b.c_x.transpose());
    qr.setThreshold(1e-10);
    if (qr.rank() < r) {
      throw RegularityError("constraint Jacobian has rank " + std::to_string(qr.rank()) +
                            " < " + std::to_string(r) + " at the estimate");
    }
  }

  b.h_x = Eigen::MatrixXd::Zero(n + r, n + r);
  b.h_x.topLeftCorner(n, n) = b.j_xx;
  b.h_x.topRightCorner(n, r) = b.c_x.transpose();
  b.h_x.bottomLeftCorner(r, n) = b.c_x;
  b.h_z = Eigen::MatrixXd::Zero(n + r, p);
  b.h_z.topRows(n) = b.j_xz;
  b.h_a = Eigen::MatrixXd::Zero(n + r, p);
  b.h_a.topRows(n) = b.j_xa;
  b.h_a.bottomRows(r) = b.c_a;
  return b;
}

KktBlocks assemble_kkt_blocks(const Network& net, const MeasurementSet& ms,
                              const EstimationResult& est, const AssemblyOptions& opts) {
  return assemble_kkt_blocks(EstimationProblem(net, ms), est, opts);
}

namespace {

void check_shapes(const KktBlocks& b) {
  const Eigen::Index n = b.j_xx.rows();
  const Eigen::Index r = b.c_x.rows();
  const Eigen::Index p = b.j_z.size();
  if (b.j_xx.cols() != n || b.c_x.cols() != n || b.j_x.size() != n ||
      b.h_x.rows() != n + r || b.h_x.cols() != n + r || b.h_z.rows() != n + r ||
      b.h_z.cols() != p || b.h_a.rows() != n + r || b.j_a.size() != b.h_a.cols()) {
    throw ShapeError("inconsistent KKT block dimensions");
  }
}

SymmetricIndefiniteFactor factor_or_throw(const KktBlocks& b) {
  check_shapes(b);
  SymmetricIndefiniteFactor fac(b.h_x);
  if (fac.singular() || !(fac.rcond() > 1e-15)) {
    throw SingularityError("KKT matrix is singular to working precision (rcond " +
                               std::to_string(fac.rcond()) + ")",
                           fac.rcond());
  }
  return fac;
}

WeightSensitivities solve_weights(const KktBlocks& b, const SymmetricIndefiniteFactor& fac) {
  const Eigen::Index n = b.j_xx.rows();
  const Eigen::Index r = b.c_x.rows();
  const Eigen::MatrixXd m = fac.solve(-b.h_a);
  WeightSensitivities out;
  out.dx_da = m.topRows(n);
  out.dlambda_da = m.bottomRows(r);
  out.dj_da = b.j_a + out.dx_da.transpose() * b.j_x;
  return out;
}

SensitivityResult solve_measurements(const KktBlocks& b, const SymmetricIndefiniteFactor& fac) {
  const Eigen::Index n = b.j_xx.rows();
  const Eigen::Index r = b.c_x.rows();
  const Eigen::MatrixXd m = fac.solve(-b.h_z);
  SensitivityResult out;
  out.dx_dz = m.topRows(n);
  out.dlambda_dz = m.bottomRows(r);
  out.dj_dz = b.j_z + out.dx_dz.transpose() * b.j_x;
  out.condition_estimate = fac.rcond();
  if (!out.dx_dz.allFinite() || !out.dlambda_dz.allFinite() || !out.dj_dz.allFinite()) {
    throw SingularityError("sensitivity solve produced non-finite values", fac.rcond());
  }
  return out;
}

}  // namespace

SensitivityResult measurement_sensitivities(const KktBlocks& blocks) {
  return solve_measurements(blocks, factor_or_throw(blocks));
}

WeightSensitivities weight_sensitivities(const KktBlocks& blocks) {
  return solve_weights(blocks, factor_or_throw(blocks));
}

SensitivityResult all_sensitivities(const KktBlocks& blocks) {
  const SymmetricIndefiniteFactor fac = factor_or_throw(blocks);
  SensitivityResult out = solve_measurements(blocks, fac);
  WeightSensitivities w = solve_weights(blocks, fac);
  out.dx_da = std::move(w.dx_da);
  out.dlambda_da = std::move(w.dlambda_da);
  out.dj_da = std::move(w.dj_da);
  return out;
}

std::vector<std::size_t> even_sample(std::size_t p, std::size_t k) {
  std::vector<std::size_t> out;
  if (p == 0 || k == 0) return out;
  if (k >= p) {
    for (std::size_t i = 0; i < p; ++i) out.push_back(i);
    return out;
  }
  for (std::size_t i = 0; i < k; ++i) out.push_back(i * (p - 1) / (k - 1 == 0 ? 1 : k - 1));
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

FdReport finite_difference_check(const EstimationProblem& problem, const EstimationResult& est,
                                 const SensitivityResult& sens, const FdOptions& opts) {
  if (!(opts.step > 0.0) || !std::isfinite(opts.step)) {
    throw DomainError("finite-difference step must be positive");
  }
  const MeasurementSet& ms = problem.measurements();
  const std::size_t p = ms.size();
  std::vector<std::size_t> sample = opts.sample;
  if (sample.empty()) sample = even_sample(p, p);

  FdReport rep;
  rep.roundoff_warning = opts.step < 1e-8;
  rep.truncation_warning = opts.step > 1e-3;

  SolverOptions solver = opts.solver;
  solver.warm_start = std::make_pair(est.x_star, est.lambda_star);
  const Eigen::VectorXd z = ms.values();
  const double h = opts.step;

  double worst = -1.0;
  std::size_t n_ok = 0;
  std::size_t n_rel = 0;
  for (std::size_t l : sample) {
    if (l >= p) throw ShapeError("finite-difference sample index out of range");
    FdEntry e;
    e.measurement = l;
    try {
      Eigen::VectorXd zp = z;
      Eigen::VectorXd zm = z;
      zp(static_cast<Eigen::Index>(l)) += h;
      zm(static_cast<Eigen::Index>(l)) -= h;
      const EstimationResult rp =
          estimate_state(EstimationProblem(problem.network(), ms.with_values(zp)), solver);
      const EstimationResult rm =
          estimate_state(EstimationProblem(problem.network(), ms.with_values(zm)), solver);
      const Eigen::VectorXd fd_dx = (rp.x_star - rm.x_star) / (2.0 * h);
      const double fd_dj = (rp.j_star - rm.j_star) / (2.0 * h);
      const auto col = static_cast<Eigen::Index>(l);
      const double diff = (sens.dx_dz.col(col) - fd_dx).lpNorm<Eigen::Infinity>();
      const double scale = fd_dx.lpNorm<Eigen::Infinity>();
      e.dx_rel_error = scale >= opts.abs_floor ? diff / scale : diff;
      const double djdiff = std::abs(sens.dj_dz(col) - fd_dj);
      e.dj_absolute = std::abs(fd_dj) < opts.abs_floor;
      e.dj_error = e.dj_absolute ? djdiff : djdiff / std::abs(fd_dj);
      e.solved = true;
    } catch (const Error&) {
      e.solved = false;
    }
    if (e.solved) {
      ++n_ok;
      rep.max_dx_rel = std::max(rep.max_dx_rel, e.dx_rel_error);
      rep.mean_dx_rel += e.dx_rel_error;
      if (e.dj_absolute) {
        rep.max_dj_abs = std::max(rep.max_dj_abs, e.dj_error);
      } else {
        rep.max_dj_rel = std::max(rep.max_dj_rel, e.dj_error);
        rep.mean_dj_rel += e.dj_error;
        ++n_rel;
      }
      const double score = std::max(e.dx_rel_error, e.dj_absolute ? 0.0 : e.dj_error);
      if (score > worst) {
        worst = score;
        rep.worst_measurement = l;
      }
    } else {
      ++rep.failed_solves;
    }
    rep.entries.push_back(e);
  }
  if (n_ok > 0) rep.mean_dx_rel /= static_cast<double>(n_ok);
  if (n_rel > 0) rep.mean_dj_rel /= static_cast<double>(n_rel);
  return rep;
}

}  // namespace sevuln
