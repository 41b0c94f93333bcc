#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "sevuln/errors.hpp"
#include "sevuln/robustness.hpp"
#include "support.hpp"

using namespace sevuln;

TEST_CASE("default scale factors") {
  const auto f = default_scale_factors();
  REQUIRE(f.size() == 24);
  CHECK(f.front() == doctest::Approx(0.55));
  CHECK(f.back() == doctest::Approx(1.15));
  for (std::size_t k = 1; k < f.size(); ++k) {
    CHECK(f[k] - f[k - 1] == doctest::Approx(0.6 / 23.0));
  }
}

TEST_CASE("column centering") {
  Eigen::MatrixXd m(2, 1);
  m << 1, 3;
  const auto [c, mean] = center_columns(m);
  CHECK(mean(0) == 2.0);
  CHECK(c(0, 0) == -1.0);
  CHECK(c(1, 0) == 1.0);
}

TEST_CASE("singular values and cumulative energy by hand") {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = 4;
  const Eigen::VectorXd s = singular_values(d);
  CHECK(s(0) == doctest::Approx(4.0));
  CHECK(s(1) == doctest::Approx(3.0));
  const Eigen::VectorXd ce = cumulative_energy(s);
  CHECK(ce(0) == doctest::Approx(4.0 / 7.0));
  CHECK(ce(1) == doctest::Approx(1.0));
  CHECK(cumulative_energy(s, true)(0) == doctest::Approx(16.0 / 25.0));
  CHECK(ce_at(ce, 1) == doctest::Approx(4.0 / 7.0));
  CHECK(ce_at(ce, 9) == 1.0);

  const Eigen::MatrixXd rank1 = Eigen::VectorXd::LinSpaced(5, 1, 5) * Eigen::RowVectorXd::LinSpaced(7, -1, 2);
  CHECK(cumulative_energy(singular_values(rank1))(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(cumulative_energy(Eigen::VectorXd::Zero(3)), DegenerateError);
}

TEST_CASE("singular values agree with the Gram eigenvalues") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (auto [rows, cols] : {std::pair{24, 150}, std::pair{30, 6}}) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
    const Eigen::VectorXd s = singular_values(m);
    const Eigen::MatrixXd gram = rows <= cols ? Eigen::MatrixXd(m * m.transpose())
                                              : Eigen::MatrixXd(m.transpose() * m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    Eigen::VectorXd ev = eig.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
    CHECK(s.size() == std::min(rows, cols));
    CHECK(testing::max_abs(s - ev) < 1e-9);
    // Trace norm and Frobenius norm.
    CHECK(s.sum() == doctest::Approx(ev.sum()).epsilon(1e-12));
    CHECK(s.squaredNorm() == doctest::Approx(m.squaredNorm()).epsilon(1e-12));

    Eigen::MatrixXd permuted = m;
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(rows));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Eigen::Index i = 0; i < rows; ++i) permuted.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
    CHECK(testing::max_abs(singular_values(permuted) - s) < 1e-10);

    const Eigen::VectorXd ce = cumulative_energy(s);
    for (Eigen::Index k = 1; k < ce.size(); ++k) CHECK(ce(k) >= ce(k - 1));
  }
}

TEST_CASE("truncated reconstruction error shrinks with rank") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(12, 20);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  double prev = m.norm();
  for (Eigen::Index r = 1; r <= 12; ++r) {
    const Eigen::MatrixXd approx = svd.matrixU().leftCols(r) *
                                   svd.singularValues().head(r).asDiagonal() *
                                   svd.matrixV().leftCols(r).transpose();
    const double err = (m - approx).norm();
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
  CHECK(prev < 1e-10);
}

TEST_CASE("i.i.d. Gaussian control is not low rank") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (auto [rows, cols] : {std::pair{24, 150}, std::pair{24, 10}, std::pair{24, 151}}) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
    const Eigen::VectorXd ce = cumulative_energy(singular_values(center_columns(m).first));
    CHECK(ce(0) < 0.8);
  }
  Eigen::MatrixXd m(24, 10);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
  CHECK(cumulative_energy(singular_values(center_columns(m).first))(0) < 0.95);
}

TEST_CASE("invariance verdict") {
  SvdReport rep;
  rep.ce_x = (Eigen::VectorXd(3) << 0.7, 0.95, 1.0).finished();
  rep.ce_j = (Eigen::VectorXd(2) << 0.85, 1.0).finished();
  const InvarianceVerdict v1 = invariance_verdict(rep, 1, 0.8);
  CHECK_FALSE(v1.invariant_x);
  CHECK(v1.invariant_j);
  CHECK_FALSE(v1.invariant);
  const InvarianceVerdict v2 = invariance_verdict(rep, 2, 1, 0.8);
  CHECK(v2.invariant);
  CHECK(v2.ce_x == 0.95);
  CHECK(v2.ce_j == 0.85);
}

TEST_CASE("4-bus sweep layout") {
  const auto c = testing::case4();
  const std::vector<double> factors = {0.7, 0.9, 1.1};
  const SensitivityEnsemble e = sweep_operating_conditions(c.net, c.cfg, factors);
  CHECK(e.n == 15);
  CHECK(e.p == 10);
  CHECK(e.x_matrix.rows() == 3);
  CHECK(e.x_matrix.cols() == 150);
  CHECK(e.j_matrix.cols() == 10);
  CHECK(e.conditions.size() == 3);
  for (const auto& cond : e.conditions) {
    CHECK(cond.ok);
    CHECK(cond.seed == 1);
  }
  const auto [i, l] = e.column_index(37);
  CHECK(i == 7);
  CHECK(l == 2);
  CHECK(e.x_matrix(1, 37) == e.conditions[1].result.dx_dz(7, 2));
  CHECK(e.j_matrix(2, 4) == e.conditions[2].result.dj_dz(4));

  SweepOptions per;
  per.seed_policy = SeedPolicy::kPerCondition;
  per.base_seed = 10;
  const SensitivityEnsemble e2 = sweep_operating_conditions(c.net, c.cfg, factors, per);
  CHECK(e2.conditions[0].seed == 10);
  CHECK(e2.conditions[2].seed == 12);

  const SvdReport rep = svd_analysis(e);
  CHECK(rep.sigma_x.size() == 3);
  CHECK(rep.mean_x.size() == 150);
}

TEST_CASE("parallel sweep matches the serial one") {
  const auto c = testing::case4();
  const auto factors = default_scale_factors();
  SweepOptions par;
  par.jobs = 4;
  const SensitivityEnsemble a = sweep_operating_conditions(c.net, c.cfg, factors);
  const SensitivityEnsemble b = sweep_operating_conditions(c.net, c.cfg, factors, par);
  CHECK(testing::max_abs(a.x_matrix - b.x_matrix) == 0.0);
  CHECK(testing::max_abs(a.j_matrix - b.j_matrix) == 0.0);
}

TEST_CASE("sweep consults the cache hooks") {
  const auto c = testing::case4();
  std::map<std::pair<double, std::uint64_t>, ConditionSensitivities> store;
  std::mutex mu;
  std::atomic<int> puts{0};
  SweepOptions opts;
  opts.cache_get = [&](double f, std::uint64_t s) -> std::optional<ConditionSensitivities> {
    std::lock_guard lock(mu);
    const auto it = store.find({f, s});
    if (it == store.end()) return std::nullopt;
    return it->second;
  };
  opts.cache_put = [&](double f, std::uint64_t s, const ConditionSensitivities& v) {
    std::lock_guard lock(mu);
    store[{f, s}] = v;
    ++puts;
  };
  const std::vector<double> factors = {0.8, 1.0};
  const SensitivityEnsemble first = sweep_operating_conditions(c.net, c.cfg, factors, opts);
  CHECK(puts == 2);
  const SensitivityEnsemble second = sweep_operating_conditions(c.net, c.cfg, factors, opts);
  CHECK(puts == 2);
  CHECK(second.conditions[0].from_cache);
  CHECK(testing::max_abs(first.x_matrix - second.x_matrix) == 0.0);
}

TEST_CASE("sweep failure handling") {
  const auto c = testing::case4();
  SweepOptions opts;
  opts.solver.max_iter = 0;
  CHECK_THROWS_AS(sweep_operating_conditions(c.net, c.cfg, {0.9, 1.0}, opts), Error);
  SweepOptions clean;
  clean.noise_scale = 0.0;
  try {
    sweep_operating_conditions(c.net, c.cfg, {0.9, 1.0}, clean);
    FAIL("expected DegenerateError");
  } catch (const Error& e) {
    CHECK(e.error_class() == ErrorClass::kDegenerate);
  }
  clean.input = StealthInput::kSurrogate;
  CHECK(sweep_operating_conditions(c.net, c.cfg, {0.9, 1.0}, clean).x_matrix.rows() == 2);
}
