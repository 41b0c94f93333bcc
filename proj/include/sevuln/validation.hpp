#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sevuln/measurements.hpp"
#include "sevuln/sensitivity.hpp"

namespace sevuln {

struct ValidationOptions {
  double noise_scale = 1.0;
  std::uint64_t seed = 1;
  std::vector<double> noiseless_factors{1.0};
  double fd_step = 1e-5;
  /// Measurements perturbed by the FD check; 0 means all when p <= 20,
  /// otherwise an evenly spaced sample of 10.
  std::size_t fd_sample = 0;
  double fd_tol = 1e-4;
  double fd_abs_floor = 1e-8;
  double noiseless_j_tol = 1e-10;
  double noiseless_state_tol = 1e-8;
  double symmetry_tol = 1e-12;
  double solve_residual_tol = 1e-8;
  double identity_tol = 1e-12;
  SolverOptions solver;
  AssemblyOptions assembly;
};

struct ValidationCheck {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  FdReport fd;
  std::vector<std::string> measurement_ids;

  bool passed() const;
};

/// Noiseless consistency against the power-flow truth, KKT/linear-algebra
/// invariants and the finite-difference oracle at the noisy estimate.
ValidationReport run_validation(const Network& net, const MeasurementConfig& cfg,
                                const ValidationOptions& opts = {});

/// max |H_x - H_x^T|.
double symmetry_defect(const Eigen::MatrixXd& h);
/// max |H_x [dx; dlambda] + H_z|.
double solve_residual(const KktBlocks& blocks, const SensitivityResult& sens);
/// Largest relative gap between dJ/dz and J_z + J_x dx/dz rebuilt directly
/// from the measurements and the estimate.
double dj_identity_gap(const EstimationProblem& problem, const EstimationResult& est,
                       const SensitivityResult& sens);

}  // namespace sevuln
