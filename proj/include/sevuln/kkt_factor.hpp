#pragma once

#include <vector>

#include <Eigen/Dense>

namespace sevuln {

/// Bunch-Kaufman LDL^T factorization of a symmetric (possibly indefinite)
/// matrix, via LAPACK dsytrf. Immutable after construction, so one factor can
/// serve many right-hand sides concurrently.
class SymmetricIndefiniteFactor {
 public:
  explicit SymmetricIndefiniteFactor(const Eigen::MatrixXd& a);

  Eigen::Index size() const { return factor_.rows(); }
  /// True when a pivot block is exactly singular.
  bool singular() const { return singular_; }
  /// Reciprocal 1-norm condition estimate (LAPACK dsycon).
  double rcond() const { return rcond_; }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

 private:
  Eigen::MatrixXd factor_;
  std::vector<int> ipiv_;
  bool singular_ = false;
  double rcond_ = 0.0;
};

}  // namespace sevuln
