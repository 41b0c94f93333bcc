#include "sevuln/kkt_factor.hpp"

#include <lapacke.h>

#include "sevuln/errors.hpp"

namespace sevuln {

SymmetricIndefiniteFactor::SymmetricIndefiniteFactor(const Eigen::MatrixXd& a)
    : factor_(a) {
  if (a.rows() != a.cols()) throw ShapeError("symmetric factorization needs a square matrix");
  const auto n = static_cast<lapack_int>(a.rows());
  ipiv_.assign(static_cast<std::size_t>(n), 0);
  if (n == 0) {
    rcond_ = 1.0;
    return;
  }
  const double anorm = a.cwiseAbs().colwise().sum().maxCoeff();
  const lapack_int info =
      LAPACKE_dsytrf(LAPACK_COL_MAJOR, 'L', n, factor_.data(), n, ipiv_.data());
  if (info < 0) throw ShapeError("dsytrf rejected its arguments");
  if (info > 0) {
    singular_ = true;
    rcond_ = 0.0;
    return;
  }
  double rcond = 0.0;
  LAPACKE_dsycon(LAPACK_COL_MAJOR, 'L', n, factor_.data(), n, ipiv_.data(), anorm, &rcond);
  rcond_ = rcond;
}

Eigen::MatrixXd SymmetricIndefiniteFactor::solve(const Eigen::MatrixXd& rhs) const {
  if (rhs.rows() != factor_.rows()) throw ShapeError("right-hand side has wrong row count");
  if (singular_) throw SingularityError("matrix is singular", 0.0);
  Eigen::MatrixXd out = rhs;
  const auto n = static_cast<lapack_int>(factor_.rows());
  if (n == 0 || rhs.cols() == 0) return out;
  LAPACKE_dsytrs(LAPACK_COL_MAJOR, 'L', n, static_cast<lapack_int>(rhs.cols()),
                 factor_.data(), n, ipiv_.data(), out.data(), n);
  return out;
}

}  // namespace sevuln
