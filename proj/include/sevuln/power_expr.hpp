#pragma once

#include <vector>

#include <Eigen/Dense>

#include "sevuln/network.hpp"

namespace sevuln {

/// Bus voltage magnitudes (per-unit) and angles (radians).
struct StateVector {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;

  static StateVector flat(std::size_t nbus) {
    const auto n = static_cast<Eigen::Index>(nbus);
    return {Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n)};
  }
};

/// Positions of v_b and theta_b inside some larger variable vector; -1 marks
/// a quantity that is held fixed (the reference angle).
struct VarMap {
  std::vector<int> v_pos;
  std::vector<int> theta_pos;
};

/// A bus-form power quantity at bus i:
///   self * v_i^2 + sum_j v_i v_j (a_j cos(theta_i - theta_j) + b_j sin(theta_i - theta_j)).
/// Injections (with Y_ii in the self term) and metered-end branch flows both
/// take this form, so one evaluator supplies values, gradients and Hessians.
struct PowerExpr {
  struct Mutual {
    int other;
    double a;
    double b;
  };

  int bus = 0;
  double self = 0.0;
  std::vector<Mutual> mutual;

  double value(const StateVector& s) const;
  void add_gradient(const StateVector& s, const VarMap& map, double scale,
                    Eigen::Ref<Eigen::VectorXd> out) const;
  void add_hessian(const StateVector& s, const VarMap& map, double scale,
                   Eigen::Ref<Eigen::MatrixXd> out) const;
};

PowerExpr injection_p_expr(const Network& net, int bus);
PowerExpr injection_q_expr(const Network& net, int bus);
/// Flow metered at bus `at` on the in-service branch joining `at` and `other`.
PowerExpr flow_p_expr(const Network& net, int at, int other);
PowerExpr flow_q_expr(const Network& net, int at, int other);

/// VarMap over the plain (v_0..v_{N-1}, theta_0..theta_{N-1}) layout.
VarMap full_bus_map(std::size_t nbus);

}  // namespace sevuln
