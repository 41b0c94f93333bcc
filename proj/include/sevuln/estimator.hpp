#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sevuln/measurements.hpp"
#include "sevuln/network.hpp"
#include "sevuln/power_expr.hpp"

namespace sevuln {

/// Variable ordering of the estimation problem:
///   v (every bus), theta (every bus but the reference),
///   P_i, Q_i (metered injection buses), P_ij, Q_ij (metered flows).
/// Zero injections are constraints on (v, theta) and add no variables.
struct DecisionLayout {
  VarMap bus_map;
  std::vector<int> p_inj_buses;
  std::vector<int> q_inj_buses;
  std::vector<Location> p_flows;
  std::vector<Location> q_flows;
  std::size_t num_vars = 0;
  std::size_t first_p_inj = 0;
  std::size_t first_q_inj = 0;
  std::size_t first_p_flow = 0;
  std::size_t first_q_flow = 0;
  /// Variable matched to each measurement (canonical measurement order).
  std::vector<int> measured_var;
};

/// One equality constraint c_k(x) = expr(v, theta) - x[var] (var < 0 for a
/// zero injection, where c_k = expr).
struct EqualityConstraint {
  PowerExpr expr;
  int var = -1;
  std::string name;
};

/// The constrained WLS problem for a fixed network and measurement set.
/// Constraint order: Pinj, Qinj, Pflow, Qflow, zero-P, zero-Q.
class EstimationProblem {
 public:
  EstimationProblem(const Network& net, const MeasurementSet& ms);

  std::size_t num_vars() const { return layout_.num_vars; }
  std::size_t num_constraints() const { return constraints_.size(); }
  std::size_t num_measurements() const { return ms_.size(); }
  const DecisionLayout& layout() const { return layout_; }
  const std::vector<EqualityConstraint>& constraints() const { return constraints_; }
  const Network& network() const { return net_; }
  const MeasurementSet& measurements() const { return ms_; }

  StateVector state_of(const Eigen::VectorXd& x) const;
  /// Flat (v, theta) with metered P/Q variables started at their readings.
  Eigen::VectorXd initial_point() const;

  double objective(const Eigen::VectorXd& x) const;
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const;
  /// Constant: 2 w_l accumulated on the diagonal of each metered variable.
  Eigen::MatrixXd objective_hessian() const;
  Eigen::VectorXd constraint_values(const Eigen::VectorXd& x) const;
  /// C_x, r x n.
  Eigen::MatrixXd constraint_jacobian(const Eigen::VectorXd& x) const;
  /// sum_k lambda_k Hess c_k.
  Eigen::MatrixXd constraint_curvature(const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& lambda) const;
  Eigen::MatrixXd lagrangian_hessian(const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& lambda) const;

  std::vector<std::string> variable_names() const;
  std::vector<std::string> constraint_names() const;

 private:
  Network net_;
  MeasurementSet ms_;
  DecisionLayout layout_;
  std::vector<EqualityConstraint> constraints_;
};

struct SolverOptions {
  double tol = 1e-9;
  int max_iter = 50;
  /// Initial Levenberg damping added to the Hessian block.
  double damping = 0.0;
  /// Extra Newton steps after reaching tol while the residual keeps falling.
  int polish_steps = 2;
  std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> warm_start;
};

struct EstimationResult {
  Eigen::VectorXd x_star;
  Eigen::VectorXd lambda_star;
  double j_star = 0.0;
  int iterations = 0;
  double kkt_residual = 0.0;
  std::vector<double> residual_history;
  StateVector state;
};

/// Newton's method on the KKT system of the constrained WLS problem.
/// Throws ObservabilityError, RegularityError or ConvergenceError.
EstimationResult estimate_state(const Network& net, const MeasurementSet& ms,
                                const SolverOptions& opts = {});
EstimationResult estimate_state(const EstimationProblem& problem,
                                const SolverOptions& opts = {});

struct KktResidual {
  double stationarity = 0.0;
  double feasibility = 0.0;
};

KktResidual kkt_residual(const EstimationProblem& problem, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& lambda);
KktResidual kkt_residual(const Network& net, const MeasurementSet& ms,
                         const Eigen::VectorXd& x, const Eigen::VectorXd& lambda);

struct BddResult {
  double threshold = 0.0;
  bool detected = false;
  long dof = 0;
};

/// Chi-square bad-data test; zero-injection constraints count as
/// pseudo-measurements in the degrees of freedom.
BddResult bdd_chi_square(double j_star, std::size_t p, std::size_t n_states,
                         std::size_t n_zero_constraints, double significance);

}  // namespace sevuln
