#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sevuln/sensitivity.hpp"

namespace sevuln {

enum class NormKind { kTwo, kInf };

struct ScoreParams {
  double gamma = 10.0;
  double alpha = 0.3;
  double beta_s = 1.0;
  double beta_l = 1.5;
  NormKind norm = NormKind::kTwo;
  /// max |z dJ/dz| at or below this counts as zero residual sensitivity.
  double degenerate_tol = 1e-7;

  void validate() const;
};

/// Where the S-score input comes from.
enum class StealthInput {
  kResidual,   // |z_l dJ/dz_l| at the noisy estimate
  kSurrogate,  // z_l^2 d2J/dz_l^2, usable at zero residuals
};

/// xi^beta / (xi^beta + (1 - xi)^beta), clamped to [0, 1] outside (0, 1).
double s_shape(double xi, double beta);

/// raw holds |z_l dJ/dz_l| (or the surrogate); returns f(gamma^(-raw/max)).
Eigen::VectorXd s_score_from_raw(const Eigen::VectorXd& raw, const ScoreParams& params);
Eigen::VectorXd s_score(const Eigen::VectorXd& dj_dz, const Eigen::VectorXd& z,
                        const ScoreParams& params);
Eigen::VectorXd column_norms(const Eigen::MatrixXd& dx_dz, NormKind norm);
Eigen::VectorXd l_score(const Eigen::MatrixXd& dx_dz, const ScoreParams& params);
Eigen::VectorXd v_score(const Eigen::VectorXd& s, const Eigen::VectorXd& l, double alpha);

/// z_l^2 * 2 w_l (1 - dx_m(l)/dz_l): second derivative of J* along z_l,
/// scaled like the first-order input.
Eigen::VectorXd stealth_surrogate(const EstimationProblem& problem,
                                  const SensitivityResult& sens);

struct ScoreRow {
  std::size_t index = 0;  // canonical measurement index
  std::string id;         // e.g. "Qinj_3"
  std::string kind;       // "V", "Pinj", ...
  std::string location;   // "3" or "3-4"
  double raw_djdz = 0.0;
  double raw_colnorm = 0.0;
  double s_score = 0.0;
  double l_score = 0.0;
  double v_score = 0.0;
  int rank = 0;  // 1-based, by v_score
};

struct ScoreTable {
  std::vector<ScoreRow> rows;  // canonical order
  StealthInput input = StealthInput::kResidual;
};

struct Ranking {
  std::vector<std::size_t> order;       // canonical indices, most vulnerable first
  std::vector<std::size_t> vulnerable;  // canonical indices with v >= threshold, ranked
};

/// Descending v_score; ties go to the lower canonical index.
Ranking rank_measurements(const ScoreTable& table, double threshold);

struct AssessmentResult {
  EstimationResult estimate;
  KktBlocks blocks;
  SensitivityResult sensitivities;
  ScoreTable table;
};

/// Assemble blocks, solve for sensitivities, score every measurement.
/// With kResidual and zero residual sensitivity, throws DegenerateError.
AssessmentResult run_algorithm_1(const EstimationProblem& problem, const EstimationResult& est,
                                 const ScoreParams& params,
                                 StealthInput input = StealthInput::kResidual,
                                 const AssemblyOptions& assembly = {});

}  // namespace sevuln
