#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "sevuln/estimator.hpp"

namespace sevuln {

/// Derivative blocks of the WLS Lagrangian at a KKT point. n variables,
/// r constraints, p measurements; the weight parameters are the p weights.
struct KktBlocks {
  Eigen::VectorXd j_x;   // n
  Eigen::VectorXd j_z;   // p
  Eigen::VectorXd j_a;   // p
  Eigen::MatrixXd j_xx;  // n x n, includes sum lambda_k Hess c_k
  Eigen::MatrixXd j_xz;  // n x p
  Eigen::MatrixXd j_xa;  // n x p
  Eigen::MatrixXd c_x;   // r x n
  Eigen::MatrixXd c_a;   // r x p, zero
  Eigen::MatrixXd h_x;   // (n+r) x (n+r)
  Eigen::MatrixXd h_z;   // (n+r) x p
  Eigen::MatrixXd h_a;   // (n+r) x p

  std::size_t n() const { return static_cast<std::size_t>(j_xx.rows()); }
  std::size_t r() const { return static_cast<std::size_t>(c_x.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(j_z.size()); }
};

/// Deliberate corruption of the assembled blocks, used to exercise the
/// validation path: `jacobian_scale` multiplies the (v, theta) derivatives
/// of every constraint.
struct AssemblyFault {
  double jacobian_scale = 1.0;
};

struct AssemblyOptions {
  double max_kkt_residual = 1e-8;
  std::optional<AssemblyFault> fault;
};

/// Throws StalePointError when est is not a KKT point of `problem`, and
/// RegularityError when C_x loses row rank.
KktBlocks assemble_kkt_blocks(const EstimationProblem& problem, const EstimationResult& est,
                              const AssemblyOptions& opts = {});
KktBlocks assemble_kkt_blocks(const Network& net, const MeasurementSet& ms,
                              const EstimationResult& est, const AssemblyOptions& opts = {});

struct SensitivityResult {
  Eigen::MatrixXd dx_dz;        // n x p
  Eigen::MatrixXd dlambda_dz;   // r x p
  Eigen::VectorXd dj_dz;        // p
  std::optional<Eigen::MatrixXd> dx_da;
  std::optional<Eigen::MatrixXd> dlambda_da;
  std::optional<Eigen::VectorXd> dj_da;
  double condition_estimate = 0.0;  // reciprocal condition number of H_x
};

/// Solves H_x M = -H_z against a single factorization of H_x.
SensitivityResult measurement_sensitivities(const KktBlocks& blocks);

struct WeightSensitivities {
  Eigen::MatrixXd dx_da;
  Eigen::MatrixXd dlambda_da;
  Eigen::VectorXd dj_da;
};

WeightSensitivities weight_sensitivities(const KktBlocks& blocks);

/// Measurement and weight sensitivities from one factorization.
SensitivityResult all_sensitivities(const KktBlocks& blocks);

struct FdOptions {
  double step = 1e-5;
  /// Measurements to perturb; empty means all.
  std::vector<std::size_t> sample;
  /// Entries of dJ/dz with |FD| below this are compared absolutely.
  double abs_floor = 1e-8;
  /// Re-solves polish past the tolerance down to round-off.
  SolverOptions solver{1e-9, 50, 0.0, 4, std::nullopt};
};

struct FdEntry {
  std::size_t measurement = 0;
  bool solved = false;
  double dx_rel_error = 0.0;
  double dj_error = 0.0;
  bool dj_absolute = false;
};

struct FdReport {
  std::vector<FdEntry> entries;
  double max_dx_rel = 0.0;
  double mean_dx_rel = 0.0;
  double max_dj_rel = 0.0;
  double mean_dj_rel = 0.0;
  double max_dj_abs = 0.0;  // over entries compared absolutely
  std::size_t worst_measurement = 0;
  std::size_t failed_solves = 0;
  bool roundoff_warning = false;
  bool truncation_warning = false;

  bool passes(double rel_tol, double abs_tol) const {
    return failed_solves == 0 && max_dx_rel <= rel_tol && max_dj_rel <= rel_tol &&
           max_dj_abs <= abs_tol;
  }
};

/// Central differences of the re-solved estimator against the analytic
/// dx/dz and dJ/dz.
FdReport finite_difference_check(const EstimationProblem& problem, const EstimationResult& est,
                                 const SensitivityResult& sens, const FdOptions& opts = {});

/// Evenly spaced sample of k indices out of p.
std::vector<std::size_t> even_sample(std::size_t p, std::size_t k);

}  // namespace sevuln
