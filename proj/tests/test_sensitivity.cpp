#include <doctest.h>

#include <cmath>

#include "sevuln/errors.hpp"
#include "sevuln/sensitivity.hpp"
#include "sevuln/validation.hpp"
#include "support.hpp"

using namespace sevuln;

namespace {

struct Solved {
  testing::Case c;
  MeasurementSet ms;
  EstimationProblem problem;
  EstimationResult est;
  KktBlocks blocks;
};

Solved solve4(std::uint64_t seed = 1) {
  testing::Case c = testing::case4();
  MeasurementSet ms = synthesize_measurements(c.net, c.cfg, 1.0, seed);
  EstimationProblem problem(c.net, ms);
  EstimationResult est = estimate_state(problem);
  KktBlocks blocks = assemble_kkt_blocks(problem, est);
  return {std::move(c), std::move(ms), std::move(problem), std::move(est), std::move(blocks)};
}

Eigen::VectorXd lagrangian_gradient(const EstimationProblem& p, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& lambda) {
  return p.objective_gradient(x) + p.constraint_jacobian(x).transpose() * lambda;
}

}  // namespace

TEST_CASE("KKT blocks match finite differences of the Lagrangian") {
  const Solved s = solve4();
  const KktBlocks& b = s.blocks;
  const Eigen::VectorXd& x = s.est.x_star;
  const Eigen::VectorXd& lam = s.est.lambda_star;
  const Eigen::VectorXd z = s.ms.values();
  const Eigen::VectorXd w = s.ms.weights();
  const std::size_t n = b.n(), r = b.r(), p = b.p();
  CHECK(n == 15);
  CHECK(r == 10);
  CHECK(p == 10);

  CHECK(testing::max_abs(b.j_x - s.problem.objective_gradient(x)) < 1e-12);
  const auto lg = [&](const Eigen::VectorXd& y) { return lagrangian_gradient(s.problem, y, lam); };
  CHECK(testing::max_abs(b.j_xx - testing::fd_jacobian(lg, x)) < 1e-5);
  const auto cons = [&](const Eigen::VectorXd& y) { return s.problem.constraint_values(y); };
  CHECK(testing::max_abs(b.c_x - testing::fd_jacobian(cons, x)) < 1e-8);

  const auto in_z = [&](const Eigen::VectorXd& zz) {
    return EstimationProblem(s.c.net, s.ms.with_values(zz));
  };
  const auto grad_z = [&](const Eigen::VectorXd& zz) { return in_z(zz).objective_gradient(x); };
  const auto obj_z = [&](const Eigen::VectorXd& zz) {
    return Eigen::VectorXd::Constant(1, in_z(zz).objective(x)).eval();
  };
  CHECK(testing::max_abs(b.j_xz - testing::fd_jacobian(grad_z, z)) < 1e-5);
  CHECK(testing::max_abs(b.j_z - testing::fd_jacobian(obj_z, z).transpose()) < 1e-5);

  const auto in_w = [&](const Eigen::VectorXd& ww) {
    return EstimationProblem(s.c.net, s.ms.with_weights(ww));
  };
  const auto grad_w = [&](const Eigen::VectorXd& ww) { return in_w(ww).objective_gradient(x); };
  const auto obj_w = [&](const Eigen::VectorXd& ww) {
    return Eigen::VectorXd::Constant(1, in_w(ww).objective(x)).eval();
  };
  CHECK(testing::max_abs(b.j_xa - testing::fd_jacobian(grad_w, w, 1e-3)) < 1e-8);
  CHECK(testing::max_abs(b.j_a - testing::fd_jacobian(obj_w, w, 1e-3).transpose()) < 1e-8);
  CHECK(testing::max_abs(b.c_a) == 0.0);

  const auto nn = static_cast<Eigen::Index>(n), rr = static_cast<Eigen::Index>(r);
  CHECK(testing::max_abs(b.h_x.topLeftCorner(nn, nn) - b.j_xx) == 0.0);
  CHECK(testing::max_abs(b.h_x.bottomLeftCorner(rr, nn) - b.c_x) == 0.0);
  CHECK(testing::max_abs(b.h_x.topRightCorner(nn, rr) - b.c_x.transpose()) == 0.0);
  CHECK(testing::max_abs(b.h_x.bottomRightCorner(rr, rr)) == 0.0);
  CHECK(testing::max_abs(b.h_z.topRows(nn) - b.j_xz) == 0.0);
  CHECK(testing::max_abs(b.h_z.bottomRows(rr)) == 0.0);
}

TEST_CASE("linear-algebra invariants of the sensitivity solve") {
  const Solved s = solve4();
  const SensitivityResult sens = measurement_sensitivities(s.blocks);
  CHECK(symmetry_defect(s.blocks.h_x) <= 1e-12);
  CHECK(solve_residual(s.blocks, sens) <= 1e-8);
  CHECK(dj_identity_gap(s.problem, s.est, sens) <= 1e-12);
  CHECK(sens.condition_estimate > 0.0);
  // Linearised feasibility: C_x dx/dz = 0.
  CHECK(testing::max_abs(s.blocks.c_x * sens.dx_dz) < 1e-9);
}

TEST_CASE("dJ*/dz reduces to the explicit partial at a KKT point") {
  const Solved s = solve4();
  const SensitivityResult sens = measurement_sensitivities(s.blocks);
  const auto& var = s.problem.layout().measured_var;
  for (std::size_t l = 0; l < s.ms.size(); ++l) {
    const Measurement& m = s.ms.at(l);
    const double partial = 2.0 * m.weight * (m.value - s.est.x_star(var[l]));
    CHECK(std::abs(sens.dj_dz(static_cast<Eigen::Index>(l)) - partial) <
          1e-6 * std::max(1.0, std::abs(partial)));
  }
}

TEST_CASE("re-solved central differences agree with dx/dz") {
  const Solved s = solve4();
  const SensitivityResult sens = measurement_sensitivities(s.blocks);
  const double h = 1e-5;
  for (std::size_t l = 0; l < s.ms.size(); ++l) {
    CAPTURE(l);
    Eigen::VectorXd zp = s.ms.values(), zm = s.ms.values();
    zp(static_cast<Eigen::Index>(l)) += h;
    zm(static_cast<Eigen::Index>(l)) -= h;
    const EstimationResult ep = estimate_state(s.c.net, s.ms.with_values(zp));
    const EstimationResult em = estimate_state(s.c.net, s.ms.with_values(zm));
    const Eigen::VectorXd col = (ep.x_star - em.x_star) / (2.0 * h);
    const Eigen::VectorXd an = sens.dx_dz.col(static_cast<Eigen::Index>(l));
    CHECK((col - an).norm() / an.norm() < 1e-4);
    const double dj = (ep.j_star - em.j_star) / (2.0 * h);
    CHECK(std::abs(dj - sens.dj_dz(static_cast<Eigen::Index>(l))) <
          1e-4 * std::max(1e-4, std::abs(dj)));
  }
}

TEST_CASE("finite-difference report on the 4-bus case") {
  const Solved s = solve4();
  const SensitivityResult sens = measurement_sensitivities(s.blocks);
  const FdReport rep = finite_difference_check(s.problem, s.est, sens);
  CHECK(rep.entries.size() == 10);
  CHECK(rep.failed_solves == 0);
  CHECK(rep.passes(1e-4, 1e-8));
  CHECK_FALSE(rep.roundoff_warning);
  CHECK_FALSE(rep.truncation_warning);

  FdOptions tiny;
  tiny.step = 1e-9;
  tiny.sample = {0};
  CHECK(finite_difference_check(s.problem, s.est, sens, tiny).roundoff_warning);
  FdOptions big;
  big.step = 1e-2;
  big.sample = {0};
  CHECK(finite_difference_check(s.problem, s.est, sens, big).truncation_warning);

  CHECK(even_sample(100, 10).size() == 10);
  CHECK(even_sample(100, 10).front() == 0);
  CHECK(even_sample(5, 10).size() == 5);
}

TEST_CASE("weight sensitivities match re-solved differences") {
  const Solved s = solve4();
  const SensitivityResult all = all_sensitivities(s.blocks);
  REQUIRE(all.dx_da.has_value());
  const WeightSensitivities ws = weight_sensitivities(s.blocks);
  CHECK(testing::max_abs(*all.dx_da - ws.dx_da) < 1e-12);
  CHECK(testing::max_abs(all.dx_dz - measurement_sensitivities(s.blocks).dx_dz) < 1e-12);

  const Eigen::VectorXd w = s.ms.weights();
  for (Eigen::Index l = 0; l < w.size(); ++l) {
    CAPTURE(l);
    const double d = w(l) * 1e-6;
    Eigen::VectorXd wp = w, wm = w;
    wp(l) += d;
    wm(l) -= d;
    const EstimationResult ep = estimate_state(s.c.net, s.ms.with_weights(wp));
    const EstimationResult em = estimate_state(s.c.net, s.ms.with_weights(wm));
    const Eigen::VectorXd col = (ep.x_star - em.x_star) / (2.0 * d);
    const Eigen::VectorXd an = ws.dx_da.col(l);
    CHECK((col - an).norm() <= 1e-3 * an.norm() + 1e-12);
    const double dj = (ep.j_star - em.j_star) / (2.0 * d);
    CHECK(std::abs(dj - ws.dj_da(l)) <= 1e-3 * std::abs(dj) + 1e-12);
  }
}

TEST_CASE("uniform weight scaling: dx/dz invariant, dJ/dz scales") {
  const Solved s = solve4(2);
  const double kappa = 4.0;
  const MeasurementSet scaled = s.ms.with_weights(s.ms.weights() * kappa);
  const EstimationProblem problem(s.c.net, scaled);
  const EstimationResult est = estimate_state(problem);
  const SensitivityResult a = measurement_sensitivities(s.blocks);
  const SensitivityResult b = measurement_sensitivities(assemble_kkt_blocks(problem, est));
  CHECK(testing::max_abs(a.dx_dz - b.dx_dz) < 1e-7);
  CHECK(testing::max_abs(kappa * a.dj_dz - b.dj_dz) < 1e-6 * testing::max_abs(b.dj_dz));
}

TEST_CASE("assembly rejects stale points and rank-deficient constraints") {
  const Solved s = solve4();
  EstimationResult moved = s.est;
  moved.x_star(0) += 1e-3;
  try {
    assemble_kkt_blocks(s.problem, moved);
    FAIL("expected StalePointError");
  } catch (const StalePointError& e) {
    CHECK(e.error_class() == ErrorClass::kConvergence);
  }
  AssemblyOptions broken;
  broken.fault = AssemblyFault{0.0};
  CHECK_THROWS_AS(assemble_kkt_blocks(s.problem, s.est, broken), RegularityError);
}

TEST_CASE("corrupted constraint Jacobian is caught by the FD oracle") {
  const Solved s = solve4();
  AssemblyOptions broken;
  broken.fault = AssemblyFault{1.01};
  const SensitivityResult sens = measurement_sensitivities(assemble_kkt_blocks(s.problem, s.est, broken));
  CHECK_FALSE(finite_difference_check(s.problem, s.est, sens).passes(1e-4, 1e-8));
}

TEST_CASE("single bus sensitivities") {
  Bus b;
  b.kind = BusKind::kSlack;
  const Network net({b}, {}, 100.0);
  const MeasurementSet ms({{MeasurementKind::kV, {0, -1}, 0.98, 1e4}}, {});
  const EstimationProblem problem(net, ms);
  const EstimationResult est = estimate_state(problem);
  const SensitivityResult sens = measurement_sensitivities(assemble_kkt_blocks(problem, est));
  CHECK(sens.dx_dz(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(sens.dj_dz(0)) < 1e-9);
}

TEST_CASE("validation report on the 4-bus case") {
  const auto c = testing::case4();
  const ValidationReport rep = run_validation(c.net, c.cfg);
  for (const auto& chk : rep.checks) {
    CAPTURE(chk.name);
    CHECK(chk.pass);
  }
  CHECK(rep.passed());
  CHECK(rep.measurement_ids.size() == 10);
}
