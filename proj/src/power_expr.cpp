#include "sevuln/power_expr.hpp"

#include <cmath>

namespace sevuln {

double PowerExpr::value(const StateVector& s) const {
  const int i = bus;
  double out = self * s.v(i) * s.v(i);
  for (const Mutual& m : mutual) {
    const double d = s.theta(i) - s.theta(m.other);
    out += s.v(i) * s.v(m.other) * (m.a * std::cos(d) + m.b * std::sin(d));
  }
  return out;
}

void PowerExpr::add_gradient(const StateVector& s, const VarMap& map,
                             double scale,
                             Eigen::Ref<Eigen::VectorXd> out) const {
  const int i = bus;
  const auto add = [&](int pos, double val) {
    if (pos >= 0) out(pos) += scale * val;
  };
  add(map.v_pos[i], 2.0 * self * s.v(i));
  for (const Mutual& m : mutual) {
    const int j = m.other;
    const double d = s.theta(i) - s.theta(j);
    const double c = std::cos(d);
    const double sn = std::sin(d);
    const double u = m.a * c + m.b * sn;
    const double du = -m.a * sn + m.b * c;
    add(map.v_pos[i], s.v(j) * u);
    add(map.v_pos[j], s.v(i) * u);
    add(map.theta_pos[i], s.v(i) * s.v(j) * du);
    add(map.theta_pos[j], -s.v(i) * s.v(j) * du);
  }
}

void PowerExpr::add_hessian(const StateVector& s, const VarMap& map,
                            double scale,
                            Eigen::Ref<Eigen::MatrixXd> out) const {
  const int i = bus;
  const auto add_sym = [&](int p, int q, double val) {
    if (p < 0 || q < 0) return;
    out(p, q) += scale * val;
    if (p != q) out(q, p) += scale * val;
  };
  const int vi = map.v_pos[i];
  const int ti = map.theta_pos[i];
  add_sym(vi, vi, 2.0 * self);
  for (const Mutual& m : mutual) {
    const int j = m.other;
    const int vj = map.v_pos[j];
    const int tj = map.theta_pos[j];
    const double d = s.theta(i) - s.theta(j);
    const double c = std::cos(d);
    const double sn = std::sin(d);
    const double u = m.a * c + m.b * sn;
    const double du = -m.a * sn + m.b * c;
    const double vv = s.v(i) * s.v(j);
    add_sym(vi, vj, u);
    add_sym(vi, ti, s.v(j) * du);
    add_sym(vi, tj, -s.v(j) * du);
    add_sym(vj, ti, s.v(i) * du);
    add_sym(vj, tj, -s.v(i) * du);
    add_sym(ti, ti, -vv * u);
    add_sym(ti, tj, vv * u);
    add_sym(tj, tj, -vv * u);
  }
}

namespace {

PowerExpr injection_expr(const Network& net, int i, bool reactive) {
  const AdmittanceMatrix& y = net.admittance();
  PowerExpr e;
  e.bus = i;
  // P: G cos + B sin.  Q: G sin - B cos.
  e.self = reactive ? -y.b(i, i) : y.g(i, i);
  for (int j : net.neighbors(i)) {
    const double g = y.g(i, j);
    const double b = y.b(i, j);
    if (reactive) {
      e.mutual.push_back({j, -b, g});
    } else {
      e.mutual.push_back({j, g, b});
    }
  }
  return e;
}

PowerExpr flow_expr(const Network& net, int at, int other, bool reactive) {
  const Branch& br = net.branches()[net.branch_between(at, other)];
  const BranchAdmittance a = branch_admittance(br);
  const bool from_end = br.from_bus == at;
  const std::complex<double> self = from_end ? a.ff : a.tt;
  const std::complex<double> mut = from_end ? a.ft : a.tf;
  PowerExpr e;
  e.bus = at;
  if (reactive) {
    e.self = -self.imag();
    e.mutual.push_back({other, -mut.imag(), mut.real()});
  } else {
    e.self = self.real();
    e.mutual.push_back({other, mut.real(), mut.imag()});
  }
  return e;
}

}  // namespace

PowerExpr injection_p_expr(const Network& net, int bus) {
  return injection_expr(net, bus, false);
}
PowerExpr injection_q_expr(const Network& net, int bus) {
  return injection_expr(net, bus, true);
}
PowerExpr flow_p_expr(const Network& net, int at, int other) {
  return flow_expr(net, at, other, false);
}
PowerExpr flow_q_expr(const Network& net, int at, int other) {
  return flow_expr(net, at, other, true);
}

VarMap full_bus_map(std::size_t nbus) {
  VarMap m;
  const int n = static_cast<int>(nbus);
  for (int i = 0; i < n; ++i) {
    m.v_pos.push_back(i);
    m.theta_pos.push_back(n + i);
  }
  return m;
}

}  // namespace sevuln
