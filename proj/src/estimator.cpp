#include "sevuln/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <boost/math/distributions/chi_squared.hpp>

#include "sevuln/errors.hpp"
#include "sevuln/kkt_factor.hpp"

namespace sevuln {

namespace {

std::string bus_label(const Network& net, int b) { return std::to_string(net.external_id(b)); }

std::string flow_label(const Network& net, const Location& l) {
  return bus_label(net, l.bus) + "-" + bus_label(net, l.to_bus);
}

template <class T>
int position_of(const std::vector<T>& v, const T& item) {
  return static_cast<int>(std::find(v.begin(), v.end(), item) - v.begin());
}

}  // namespace

EstimationProblem::EstimationProblem(const Network& net, const MeasurementSet& ms)
    : net_(net), ms_(ms) {
  const int nbus = static_cast<int>(net_.num_buses());
  const int ref = net_.slack();

  DecisionLayout& lay = layout_;
  int next = 0;
  lay.bus_map.v_pos.resize(nbus);
  lay.bus_map.theta_pos.resize(nbus);
  for (int b = 0; b < nbus; ++b) lay.bus_map.v_pos[b] = next++;
  for (int b = 0; b < nbus; ++b) lay.bus_map.theta_pos[b] = b == ref ? -1 : next++;

  for (const Measurement& m : ms_.measurements()) {
    const auto push_unique = [](auto& v, const auto& item) {
      if (std::find(v.begin(), v.end(), item) == v.end()) v.push_back(item);
    };
    switch (m.kind) {
      case MeasurementKind::kV: break;
      case MeasurementKind::kPinj: push_unique(lay.p_inj_buses, m.location.bus); break;
      case MeasurementKind::kQinj: push_unique(lay.q_inj_buses, m.location.bus); break;
      case MeasurementKind::kPflow: push_unique(lay.p_flows, m.location); break;
      case MeasurementKind::kQflow: push_unique(lay.q_flows, m.location); break;
    }
  }
  lay.first_p_inj = static_cast<std::size_t>(next);
  next += static_cast<int>(lay.p_inj_buses.size());
  lay.first_q_inj = static_cast<std::size_t>(next);
  next += static_cast<int>(lay.q_inj_buses.size());
  lay.first_p_flow = static_cast<std::size_t>(next);
  next += static_cast<int>(lay.p_flows.size());
  lay.first_q_flow = static_cast<std::size_t>(next);
  next += static_cast<int>(lay.q_flows.size());
  lay.num_vars = static_cast<std::size_t>(next);

  for (const Measurement& m : ms_.measurements()) {
    int var = 0;
    switch (m.kind) {
      case MeasurementKind::kV:
        if (m.location.bus < 0 || m.location.bus >= nbus) throw LookupError("V measurement bus outside network");
        var = lay.bus_map.v_pos[m.location.bus];
        break;
      case MeasurementKind::kPinj:
        var = static_cast<int>(lay.first_p_inj) + position_of(lay.p_inj_buses, m.location.bus);
        break;
      case MeasurementKind::kQinj:
        var = static_cast<int>(lay.first_q_inj) + position_of(lay.q_inj_buses, m.location.bus);
        break;
      case MeasurementKind::kPflow:
        var = static_cast<int>(lay.first_p_flow) + position_of(lay.p_flows, m.location);
        break;
      case MeasurementKind::kQflow:
        var = static_cast<int>(lay.first_q_flow) + position_of(lay.q_flows, m.location);
        break;
    }
    lay.measured_var.push_back(var);
  }

  for (std::size_t k = 0; k < lay.p_inj_buses.size(); ++k) {
    const int b = lay.p_inj_buses[k];
    constraints_.push_back({injection_p_expr(net_, b), static_cast<int>(lay.first_p_inj + k),
                            "Pinj_" + bus_label(net_, b)});
  }
  for (std::size_t k = 0; k < lay.q_inj_buses.size(); ++k) {
    const int b = lay.q_inj_buses[k];
    constraints_.push_back({injection_q_expr(net_, b), static_cast<int>(lay.first_q_inj + k),
                            "Qinj_" + bus_label(net_, b)});
  }
  for (std::size_t k = 0; k < lay.p_flows.size(); ++k) {
    const Location& l = lay.p_flows[k];
    constraints_.push_back({flow_p_expr(net_, l.bus, l.to_bus),
                            static_cast<int>(lay.first_p_flow + k), "Pflow_" + flow_label(net_, l)});
  }
  for (std::size_t k = 0; k < lay.q_flows.size(); ++k) {
    const Location& l = lay.q_flows[k];
    constraints_.push_back({flow_q_expr(net_, l.bus, l.to_bus),
                            static_cast<int>(lay.first_q_flow + k), "Qflow_" + flow_label(net_, l)});
  }
  for (int b : ms_.zero_injection_buses()) {
    if (b < 0 || b >= nbus) throw LookupError("zero-injection bus outside network");
    constraints_.push_back({injection_p_expr(net_, b), -1, "zeroP_" + bus_label(net_, b)});
  }
  for (int b : ms_.zero_injection_buses()) {
    constraints_.push_back({injection_q_expr(net_, b), -1, "zeroQ_" + bus_label(net_, b)});
  }
}

StateVector EstimationProblem::state_of(const Eigen::VectorXd& x) const {
  const auto nbus = static_cast<Eigen::Index>(net_.num_buses());
  StateVector s{Eigen::VectorXd(nbus), Eigen::VectorXd::Zero(nbus)};
  for (Eigen::Index b = 0; b < nbus; ++b) {
    s.v(b) = x(layout_.bus_map.v_pos[b]);
    const int tp = layout_.bus_map.theta_pos[b];
    if (tp >= 0) s.theta(b) = x(tp);
  }
  return s;
}

Eigen::VectorXd EstimationProblem::initial_point() const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_vars()));
  for (std::size_t b = 0; b < net_.num_buses(); ++b) x(layout_.bus_map.v_pos[b]) = 1.0;
  std::map<int, std::pair<double, int>> acc;
  for (std::size_t l = 0; l < ms_.size(); ++l) {
    const Measurement& m = ms_.at(l);
    if (m.kind == MeasurementKind::kV) continue;
    auto& slot = acc[layout_.measured_var[l]];
    slot.first += m.value;
    slot.second += 1;
  }
  for (const auto& [var, sum] : acc) x(var) = sum.first / sum.second;
  return x;
}

double EstimationProblem::objective(const Eigen::VectorXd& x) const {
  double j = 0.0;
  for (std::size_t l = 0; l < ms_.size(); ++l) {
    const Measurement& m = ms_.at(l);
    const double r = m.value - x(layout_.measured_var[l]);
    j += m.weight * r * r;
  }
  return j;
}

Eigen::VectorXd EstimationProblem::objective_gradient(const Eigen::VectorXd& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  for (std::size_t l = 0; l < ms_.size(); ++l) {
    const Measurement& m = ms_.at(l);
    const int var = layout_.measured_var[l];
    g(var) += -2.0 * m.weight * (m.value - x(var));
  }
  return g;
}

Eigen::MatrixXd EstimationProblem::objective_hessian() const {
  const auto n = static_cast<Eigen::Index>(num_vars());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t l = 0; l < ms_.size(); ++l) {
    const int var = layout_.measured_var[l];
    h(var, var) += 2.0 * ms_.at(l).weight;
  }
  return h;
}

Eigen::VectorXd EstimationProblem::constraint_values(const Eigen::VectorXd& x) const {
  const StateVector s = state_of(x);
  Eigen::VectorXd c(static_cast<Eigen::Index>(num_constraints()));
  for (std::size_t k = 0; k < constraints_.size(); ++k) {
    const EqualityConstraint& ec = constraints_[k];
    c(k) = ec.expr.value(s) - (ec.var >= 0 ? x(ec.var) : 0.0);
  }
  return c;
}

Eigen::MatrixXd EstimationProblem::constraint_jacobian(const Eigen::VectorXd& x) const {
  const StateVector s = state_of(x);
  Eigen::MatrixXd cx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_constraints()),
                                             static_cast<Eigen::Index>(num_vars()));
  Eigen::VectorXd row(cx.cols());
  for (std::size_t k = 0; k < constraints_.size(); ++k) {
    const EqualityConstraint& ec = constraints_[k];
    row.setZero();
    ec.expr.add_gradient(s, layout_.bus_map, 1.0, row);
    if (ec.var >= 0) row(ec.var) -= 1.0;
    cx.row(k) = row.transpose();
  }
  return cx;
}

Eigen::MatrixXd EstimationProblem::constraint_curvature(const Eigen::VectorXd& x,
                                                        const Eigen::VectorXd& lambda) const {
  const StateVector s = state_of(x);
  const auto n = static_cast<Eigen::Index>(num_vars());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < constraints_.size(); ++k) {
    if (lambda(k) != 0.0) constraints_[k].expr.add_hessian(s, layout_.bus_map, lambda(k), h);
  }
  return h;
}

Eigen::MatrixXd EstimationProblem::lagrangian_hessian(const Eigen::VectorXd& x,
                                                      const Eigen::VectorXd& lambda) const {
  return objective_hessian() + constraint_curvature(x, lambda);
}

std::vector<std::string> EstimationProblem::variable_names() const {
  std::vector<std::string> names(num_vars());
  for (std::size_t b = 0; b < net_.num_buses(); ++b) {
    names[layout_.bus_map.v_pos[b]] = "v_" + bus_label(net_, static_cast<int>(b));
    const int tp = layout_.bus_map.theta_pos[b];
    if (tp >= 0) names[tp] = "theta_" + bus_label(net_, static_cast<int>(b));
  }
  for (std::size_t k = 0; k < layout_.p_inj_buses.size(); ++k)
    names[layout_.first_p_inj + k] = "P_" + bus_label(net_, layout_.p_inj_buses[k]);
  for (std::size_t k = 0; k < layout_.q_inj_buses.size(); ++k)
    names[layout_.first_q_inj + k] = "Q_" + bus_label(net_, layout_.q_inj_buses[k]);
  for (std::size_t k = 0; k < layout_.p_flows.size(); ++k)
    names[layout_.first_p_flow + k] = "P_" + flow_label(net_, layout_.p_flows[k]);
  for (std::size_t k = 0; k < layout_.q_flows.size(); ++k)
    names[layout_.first_q_flow + k] = "Q_" + flow_label(net_, layout_.q_flows[k]);
  return names;
}

std::vector<std::string> EstimationProblem::constraint_names() const {
  std::vector<std::string> names;
  for (const auto& c : constraints_) names.push_back(c.name);
  return names;
}

// ---------------------------------------------------------------------------

namespace {

struct KktState {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
  Eigen::VectorXd residual;  // [grad L; c]
};

Eigen::VectorXd kkt_vector(const EstimationProblem& p, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lambda) {
  const auto n = static_cast<Eigen::Index>(p.num_vars());
  const auto r = static_cast<Eigen::Index>(p.num_constraints());
  Eigen::VectorXd f(n + r);
  f.head(n) = p.objective_gradient(x);
  if (r > 0) f.head(n) += p.constraint_jacobian(x).transpose() * lambda;
  f.tail(r) = p.constraint_values(x);
  return f;
}

Eigen::MatrixXd kkt_matrix(const Eigen::MatrixXd& hess, const Eigen::MatrixXd& cx) {
  const Eigen::Index n = hess.rows();
  const Eigen::Index r = cx.rows();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n + r, n + r);
  k.topLeftCorner(n, n) = hess;
  k.topRightCorner(n, r) = cx.transpose();
  k.bottomLeftCorner(r, n) = cx;
  return k;
}

void check_regularity(const EstimationProblem& p, const Eigen::VectorXd& x) {
  const auto r = static_cast<Eigen::Index>(p.num_constraints());
  const auto n = static_cast<Eigen::Index>(p.num_vars());
  if (r > 0) {
    const Eigen::MatrixXd cx = p.constraint_jacobian(x);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cx.transpose());
    qr.setThreshold(1e-10);
    if (qr.rank() < r) {
      std::string names;
      const auto perm = qr.colsPermutation().indices();
      const auto all = p.constraint_names();
      for (Eigen::Index k = qr.rank(); k < r; ++k) {
        if (!names.empty()) names += ", ";
        names += all[static_cast<std::size_t>(perm(k))];
      }
      throw RegularityError("constraint gradients are linearly dependent (rank " +
                            std::to_string(qr.rank()) + " < " + std::to_string(r) +
                            "); dependent constraints: " + names);
    }
  }
  const Eigen::MatrixXd k = kkt_matrix(p.objective_hessian(), p.constraint_jacobian(x));
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(k);
  qr.setThreshold(1e-10);
  if (qr.rank() < n + r) {
    throw ObservabilityError("measurement configuration is unobservable: KKT matrix rank " +
                             std::to_string(qr.rank()) + " < " + std::to_string(n + r));
  }
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

}  // namespace

EstimationResult estimate_state(const EstimationProblem& p, const SolverOptions& opts) {
  const auto n = static_cast<Eigen::Index>(p.num_vars());
  const auto r = static_cast<Eigen::Index>(p.num_constraints());

  Eigen::VectorXd x;
  Eigen::VectorXd lambda;
  if (opts.warm_start) {
    x = opts.warm_start->first;
    lambda = opts.warm_start->second;
    if (x.size() != n || lambda.size() != r) throw ShapeError("warm start has wrong dimensions");
  } else {
    x = p.initial_point();
    lambda = Eigen::VectorXd::Zero(r);
    check_regularity(p, x);
  }

  EstimationResult res;
  Eigen::VectorXd f = kkt_vector(p, x, lambda);
  double norm = inf_norm(f);
  res.residual_history.push_back(norm);

  double mu = opts.damping;
  bool gauss_newton = false;
  int polish_left = opts.polish_steps;
  int iter = 0;
  while (true) {
    if (norm <= opts.tol) {
      if (polish_left <= 0) break;
      --polish_left;
    }
    if (iter >= opts.max_iter) {
      if (norm <= opts.tol) break;
      throw ConvergenceError("state estimation did not converge in " +
                                 std::to_string(opts.max_iter) + " iterations (KKT residual " +
                                 std::to_string(norm) + ")",
                             norm);
    }
    const Eigen::MatrixXd cx = p.constraint_jacobian(x);
    const Eigen::MatrixXd hess = gauss_newton ? p.objective_hessian()
                                              : p.lagrangian_hessian(x, lambda);
    const double hscale = std::max(1.0, hess.cwiseAbs().maxCoeff());

    bool accepted = false;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      Eigen::MatrixXd k = kkt_matrix(hess, cx);
      if (mu > 0.0) k.topLeftCorner(n, n).diagonal().array() += mu;
      const SymmetricIndefiniteFactor fac(k);
      if (fac.singular() || fac.rcond() < 1e-16) {
        mu = std::max(10.0 * mu, 1e-8 * hscale);
        continue;
      }
      const Eigen::VectorXd step = fac.solve(-f);
      // Backtracking on ||F||_2.
      const double phi = f.squaredNorm();
      double alpha = 1.0;
      for (int ls = 0; ls < 10; ++ls, alpha *= 0.5) {
        const Eigen::VectorXd xt = x + alpha * step.head(n);
        const Eigen::VectorXd lt = lambda + alpha * step.tail(r);
        if (!(p.state_of(xt).v.array() > 0.0).all()) continue;
        const Eigen::VectorXd ft = kkt_vector(p, xt, lt);
        if (ft.allFinite() && ft.squaredNorm() <= (1.0 - 1e-4 * alpha) * phi) {
          x = xt;
          lambda = lt;
          f = ft;
          accepted = true;
          break;
        }
      }
      if (!accepted) mu = std::max(10.0 * mu, 1e-6 * hscale);
    }
    ++iter;
    if (!accepted) {
      if (norm <= opts.tol) break;  // polishing stalled at round-off
      if (!gauss_newton) {
        gauss_newton = true;
        mu = opts.damping;
        continue;
      }
      throw ConvergenceError("state estimation stalled (KKT residual " +
                                 std::to_string(norm) + ")",
                             norm);
    }
    gauss_newton = false;
    mu = mu < 1e-12 * hscale ? 0.0 : mu / 10.0;
    norm = inf_norm(f);
    res.residual_history.push_back(norm);
  }

  res.x_star = x;
  res.lambda_star = lambda;
  res.j_star = p.objective(x);
  res.iterations = iter;
  res.kkt_residual = norm;
  res.state = p.state_of(x);
  return res;
}

EstimationResult estimate_state(const Network& net, const MeasurementSet& ms,
                                const SolverOptions& opts) {
  return estimate_state(EstimationProblem(net, ms), opts);
}

KktResidual kkt_residual(const EstimationProblem& p, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& lambda) {
  if (static_cast<std::size_t>(x.size()) != p.num_vars() ||
      static_cast<std::size_t>(lambda.size()) != p.num_constraints()) {
    throw ShapeError("candidate (x, lambda) has wrong dimensions");
  }
  const Eigen::VectorXd f = kkt_vector(p, x, lambda);
  const auto n = static_cast<Eigen::Index>(p.num_vars());
  return {inf_norm(f.head(n)), inf_norm(f.tail(f.size() - n))};
}

KktResidual kkt_residual(const Network& net, const MeasurementSet& ms,
                         const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) {
  return kkt_residual(EstimationProblem(net, ms), x, lambda);
}

BddResult bdd_chi_square(double j_star, std::size_t p, std::size_t n_states,
                         std::size_t n_zero_constraints, double significance) {
  const long dof = static_cast<long>(p + n_zero_constraints) - static_cast<long>(n_states);
  if (dof < 1) {
    throw ValidationError("insufficient redundancy for bad-data detection (dof " +
                          std::to_string(dof) + ")");
  }
  if (!(significance > 0.0 && significance < 1.0)) {
    throw DomainError("significance must lie in (0, 1)");
  }
  const boost::math::chi_squared dist(static_cast<double>(dof));
  BddResult out;
  out.dof = dof;
  out.threshold = boost::math::quantile(dist, 1.0 - significance);
  out.detected = j_star > out.threshold;
  return out;
}

}  // namespace sevuln
