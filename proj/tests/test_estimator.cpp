#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sevuln/errors.hpp"
#include "sevuln/estimator.hpp"
#include "support.hpp"

using namespace sevuln;

namespace {

Network one_bus() {
  Bus b;
  b.index = 0;
  b.external_id = 1;
  b.kind = BusKind::kSlack;
  return Network({b}, {}, 100.0);
}

double weighted_residual_sum(const EstimationProblem& problem, const Eigen::VectorXd& x) {
  double j = 0.0;
  const auto& var = problem.layout().measured_var;
  for (std::size_t l = 0; l < problem.num_measurements(); ++l) {
    const Measurement& m = problem.measurements().at(l);
    const double r = m.value - x(var[l]);
    j += m.weight * r * r;
  }
  return j;
}

double state_error(const StateVector& a, const StateVector& b) {
  return std::max((a.v - b.v).lpNorm<Eigen::Infinity>(),
                  (a.theta - b.theta).lpNorm<Eigen::Infinity>());
}

}  // namespace

TEST_CASE("decision layout of the 4-bus problem") {
  const auto c = testing::case4();
  const EstimationProblem problem(c.net, synthesize_measurements(c.net, c.cfg, 1.0, 1));
  // 4 magnitudes, 3 angles, 2 + 2 injections, 3 + 1 flows
  CHECK(problem.num_vars() == 15);
  CHECK(problem.num_constraints() == 10);
  CHECK(problem.num_measurements() == 10);
  const auto names = problem.variable_names();
  CHECK(names.front() == "v_1");
  CHECK(std::find(names.begin(), names.end(), "theta_1") == names.end());
  const auto cn = problem.constraint_names();
  CHECK(std::count_if(cn.begin(), cn.end(), [](const std::string& s) {
          return s.rfind("zero", 0) == 0;
        }) == 2);
}

TEST_CASE("problem derivatives match finite differences") {
  const auto c = testing::case4();
  const EstimationProblem problem(c.net, synthesize_measurements(c.net, c.cfg, 1.0, 2));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.05);
  Eigen::VectorXd x = problem.initial_point();
  for (Eigen::Index k = 0; k < x.size(); ++k) x(k) += nd(rng);
  Eigen::VectorXd lambda(static_cast<Eigen::Index>(problem.num_constraints()));
  for (Eigen::Index k = 0; k < lambda.size(); ++k) lambda(k) = nd(rng) * 20.0;

  const auto obj = [&](const Eigen::VectorXd& y) {
    return Eigen::VectorXd::Constant(1, problem.objective(y)).eval();
  };
  const Eigen::VectorXd g = problem.objective_gradient(x);
  CHECK(testing::max_abs(g - testing::fd_jacobian(obj, x).transpose()) < 1e-4);
  CHECK(problem.objective(x) == doctest::Approx(weighted_residual_sum(problem, x)).epsilon(1e-12));

  const auto grad = [&](const Eigen::VectorXd& y) { return problem.objective_gradient(y); };
  CHECK(testing::max_abs(problem.objective_hessian() - testing::fd_jacobian(grad, x)) < 1e-4);

  const auto cons = [&](const Eigen::VectorXd& y) { return problem.constraint_values(y); };
  CHECK(testing::max_abs(problem.constraint_jacobian(x) - testing::fd_jacobian(cons, x)) < 1e-8);

  const auto weighted_grad = [&](const Eigen::VectorXd& y) {
    return Eigen::VectorXd(problem.constraint_jacobian(y).transpose() * lambda);
  };
  CHECK(testing::max_abs(problem.constraint_curvature(x, lambda) -
                         testing::fd_jacobian(weighted_grad, x)) < 1e-7);
  CHECK(testing::max_abs(problem.lagrangian_hessian(x, lambda) - problem.objective_hessian() -
                         problem.constraint_curvature(x, lambda)) < 1e-12);
}

TEST_CASE("noiseless data is reproduced exactly") {
  for (auto c : {testing::case4(), testing::case39()}) {
    const MeasurementSet ms = synthesize_measurements(c.net, c.cfg, 0.0, 1);
    const EstimationResult est = estimate_state(c.net, ms);
    CHECK(est.j_star <= 1e-10);
    CHECK(state_error(est.state, *ms.truth()) <= 1e-8);
  }
}

TEST_CASE("noisy 4-bus estimate is a KKT point") {
  const auto c = testing::case4();
  const MeasurementSet ms = synthesize_measurements(c.net, c.cfg, 1.0, 1);
  const EstimationProblem problem(c.net, ms);
  const EstimationResult est = estimate_state(problem);
  const KktResidual res = kkt_residual(problem, est.x_star, est.lambda_star);
  CHECK(res.stationarity < 1e-8);
  CHECK(res.feasibility < 1e-10);
  CHECK(est.j_star == doctest::Approx(weighted_residual_sum(problem, est.x_star)).epsilon(1e-12));
  CHECK(est.j_star > 0.0);
  CHECK_FALSE(est.residual_history.empty());
  CHECK_THROWS_AS(kkt_residual(problem, est.x_star.head(3), est.lambda_star), ShapeError);
}

TEST_CASE("single bus with one voltage reading") {
  const Network net = one_bus();
  const MeasurementSet ms({{MeasurementKind::kV, {0, -1}, 1.02, 1e4}}, {});
  const EstimationResult est = estimate_state(net, ms);
  CHECK(est.x_star.size() == 1);
  CHECK(est.lambda_star.size() == 0);
  CHECK(est.state.v(0) == doctest::Approx(1.02).epsilon(1e-12));
  CHECK(est.j_star < 1e-20);
}

TEST_CASE("uniform weight scaling leaves the estimate and scales J*") {
  const auto c = testing::case4();
  const MeasurementSet ms = synthesize_measurements(c.net, c.cfg, 1.0, 4);
  const EstimationResult base = estimate_state(c.net, ms);
  const double kappa = 3.5;
  const EstimationResult scaled = estimate_state(c.net, ms.with_weights(ms.weights() * kappa));
  CHECK(testing::max_abs(base.x_star - scaled.x_star) < 1e-9);
  CHECK(scaled.j_star == doctest::Approx(kappa * base.j_star).epsilon(1e-8));
}

TEST_CASE("input order does not change the estimate") {
  const auto c = testing::case4();
  const MeasurementSet ms = synthesize_measurements(c.net, c.cfg, 1.0, 1);
  std::vector<Measurement> shuffled = ms.measurements();
  std::mt19937_64 rng(9);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const MeasurementSet again(shuffled, ms.zero_injection_buses());
  CHECK(testing::max_abs(estimate_state(c.net, ms).x_star - estimate_state(c.net, again).x_star) ==
        0.0);
}

TEST_CASE("a reading split into two half-weight copies is equivalent") {
  const auto c = testing::case4();
  const MeasurementSet ms = synthesize_measurements(c.net, c.cfg, 1.0, 1);
  std::vector<Measurement> dup = ms.measurements();
  dup[0].weight /= 2.0;
  dup.push_back(dup[0]);
  const MeasurementSet split(dup, ms.zero_injection_buses());
  CHECK(split.size() == ms.size() + 1);
  const EstimationResult a = estimate_state(c.net, ms);
  const EstimationResult b = estimate_state(c.net, split);
  CHECK(state_error(a.state, b.state) < 1e-9);
  CHECK(b.j_star == doctest::Approx(a.j_star).epsilon(1e-7));
}

TEST_CASE("perturbed flow raises J* to the recomputed residual sum") {
  const auto c = testing::case4();
  const MeasurementSet clean = synthesize_measurements(c.net, c.cfg, 0.0, 1);
  Eigen::VectorXd z = clean.values();
  const std::size_t k = clean.index_of(MeasurementKind::kPflow, {2, 3});
  z(static_cast<Eigen::Index>(k)) += 0.1;
  const EstimationProblem problem(c.net, clean.with_values(z));
  const EstimationResult est = estimate_state(problem);
  CHECK(est.j_star > 1.0);
  CHECK(est.j_star == doctest::Approx(weighted_residual_sum(problem, est.x_star)).epsilon(1e-12));
}

TEST_CASE("solver failure classes") {
  SUBCASE("unobservable configuration") {
    const Network net = load_case_file(testing::data_path("case4.m"));
    const MeasurementConfig cfg = parse_measurement_config(R"({"v": [1, 2, 3, 4]})", net);
    const MeasurementSet ms = synthesize_measurements(net, cfg, 1.0, 1);
    try {
      estimate_state(net, ms);
      FAIL("expected ObservabilityError");
    } catch (const ObservabilityError& e) {
      CHECK(e.error_class() == ErrorClass::kRegularity);
    }
  }
  SUBCASE("iteration budget exhausted") {
    const auto c = testing::case39();
    const MeasurementSet ms = synthesize_measurements(c.net, c.cfg, 1.0, 1);
    SolverOptions opts;
    opts.max_iter = 1;
    try {
      estimate_state(c.net, ms, opts);
      FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
      CHECK(e.error_class() == ErrorClass::kConvergence);
      CHECK(e.last_residual() > 0.0);
    }
  }
}

TEST_CASE("chi-square bad-data threshold") {
  const BddResult r = bdd_chi_square(2.0, 10, 7, 2, 0.05);
  CHECK(r.dof == 5);
  CHECK(r.threshold == doctest::Approx(11.070497693516351).epsilon(1e-12));
  CHECK_FALSE(r.detected);
  CHECK(bdd_chi_square(11.08, 10, 7, 2, 0.05).detected);
  CHECK_THROWS_AS(bdd_chi_square(1.0, 3, 7, 0, 0.05), ValidationError);
  CHECK_THROWS_AS(bdd_chi_square(1.0, 10, 7, 2, 0.0), DomainError);
  CHECK_THROWS_AS(bdd_chi_square(1.0, 10, 7, 2, 1.5), DomainError);
}
