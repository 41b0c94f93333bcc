#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sevuln/errors.hpp"
#include "sevuln/measurements.hpp"
#include "sevuln/scoring.hpp"

namespace sevuln {

/// 24 demand multipliers evenly spaced on [0.55, 1.15].
std::vector<double> default_scale_factors();

enum class SeedPolicy {
  kCommon,        // every condition reuses the base seed
  kPerCondition,  // condition k uses base seed + k
};

/// Sensitivities of one operating condition, as stored in the on-disk cache.
struct ConditionSensitivities {
  Eigen::MatrixXd dx_dz;
  Eigen::VectorXd dj_dz;
  ScoreTable table;
  double j_star = 0.0;
};

struct SweepOptions {
  double noise_scale = 1.0;
  std::uint64_t base_seed = 1;
  SeedPolicy seed_policy = SeedPolicy::kCommon;
  /// kSurrogate evaluates at noiseless data and stacks d2J*/dz2 into J.
  StealthInput input = StealthInput::kResidual;
  ScoreParams score;
  SolverOptions solver;
  int jobs = 1;
  /// Optional cache lookups, keyed by (factor, seed).
  std::function<std::optional<ConditionSensitivities>(double, std::uint64_t)> cache_get;
  std::function<void(double, std::uint64_t, const ConditionSensitivities&)> cache_put;
};

struct ConditionOutcome {
  double factor = 1.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  ErrorClass error_class = ErrorClass::kValidation;
  bool from_cache = false;
  ConditionSensitivities result;
};

/// Row k of x_matrix is dx/dz of the k-th successful condition, flattened
/// column-major (flat index = l * n + i); row k of j_matrix is dJ/dz.
struct SensitivityEnsemble {
  std::vector<double> factors;
  Eigen::MatrixXd x_matrix;
  Eigen::MatrixXd j_matrix;
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<std::string> variable_names;
  std::vector<std::string> measurement_ids;
  std::vector<ConditionOutcome> conditions;  // every requested factor, in order

  /// (variable, measurement) of a flat X column.
  std::pair<std::size_t, std::size_t> column_index(std::size_t flat) const;
};

/// Runs power flow, synthesis, estimation and sensitivities per factor.
/// Failing conditions are recorded; throws (with the class of the first
/// failure) if fewer than min(2, t) succeed.
SensitivityEnsemble sweep_operating_conditions(const Network& net, const MeasurementConfig& cfg,
                                               const std::vector<double>& factors,
                                               const SweepOptions& opts = {});

/// Column-mean removal; returns (centered, means).
std::pair<Eigen::MatrixXd, Eigen::VectorXd> center_columns(const Eigen::MatrixXd& m);

/// Descending singular values.
Eigen::VectorXd singular_values(const Eigen::MatrixXd& m);

/// CE(r) = sum_{i<=r} s_i / sum s_i (or with squares). Throws DegenerateError
/// when all singular values vanish.
Eigen::VectorXd cumulative_energy(const Eigen::VectorXd& sigma, bool squared = false);

struct SvdReport {
  Eigen::VectorXd sigma_x;
  Eigen::VectorXd sigma_j;
  Eigen::VectorXd ce_x;
  Eigen::VectorXd ce_j;
  Eigen::VectorXd mean_x;
  Eigen::VectorXd mean_j;
  bool squared = false;
};

SvdReport svd_analysis(const SensitivityEnsemble& ensemble, bool squared = false);

struct InvarianceVerdict {
  std::size_t r = 1;
  double threshold = 0.0;
  double ce_x = 0.0;
  double ce_j = 0.0;
  bool invariant_x = false;
  bool invariant_j = false;
  bool invariant = false;
};

/// CE at rank r for both matrices against the threshold; r past the last
/// singular value reads CE = 1.
InvarianceVerdict invariance_verdict(const SvdReport& report, std::size_t r, double threshold);
InvarianceVerdict invariance_verdict(const SvdReport& report, std::size_t r_x, std::size_t r_j,
                                     double threshold);

double ce_at(const Eigen::VectorXd& ce, std::size_t r);

}  // namespace sevuln
