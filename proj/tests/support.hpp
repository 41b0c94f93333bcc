#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

#include "sevuln/measurements.hpp"
#include "sevuln/network.hpp"

namespace testing {

inline std::string data_path(const std::string& name) {
  return std::string(SEVULN_DATA_DIR) + "/" + name;
}

struct Case {
  sevuln::Network net;
  sevuln::MeasurementConfig cfg;
};

inline Case load_case(const std::string& case_file, const std::string& meas_file) {
  sevuln::Network net = sevuln::load_case_file(data_path(case_file));
  sevuln::MeasurementConfig cfg = sevuln::load_measurement_config(data_path(meas_file), net);
  return {std::move(net), std::move(cfg)};
}

inline Case case4() { return load_case("case4.m", "meas4.json"); }
inline Case case39() { return load_case("case39.m", "meas39.json"); }

/// Slack at bus 1, PQ bus 2, one branch.
inline sevuln::Network two_bus(double r, double x, double b_sh, double tap = 1.0,
                               double load_p = 0.0, double load_q = 0.0) {
  using namespace sevuln;
  Bus b1;
  b1.index = 0;
  b1.external_id = 1;
  b1.kind = BusKind::kSlack;
  Bus b2;
  b2.index = 1;
  b2.external_id = 2;
  b2.demand_p = load_p;
  b2.demand_q = load_q;
  Branch br;
  br.from_bus = 0;
  br.to_bus = 1;
  br.r = r;
  br.x = x;
  br.b_sh = b_sh;
  br.tap = tap;
  return Network({b1, b2}, {br}, 100.0);
}

/// Central-difference Jacobian of f at x.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    jac.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return jac;
}

inline double max_abs(const Eigen::MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

}  // namespace testing
