#include "sevuln/measurements.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sevuln/errors.hpp"

namespace sevuln {

using Complex = std::complex<double>;
using nlohmann::json;

std::string_view kind_name(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::kV: return "V";
    case MeasurementKind::kPinj: return "Pinj";
    case MeasurementKind::kQinj: return "Qinj";
    case MeasurementKind::kPflow: return "Pflow";
    case MeasurementKind::kQflow: return "Qflow";
  }
  return "?";
}

MeasurementKind parse_kind(std::string_view name) {
  for (auto k : {MeasurementKind::kV, MeasurementKind::kPinj, MeasurementKind::kQinj,
                 MeasurementKind::kPflow, MeasurementKind::kQflow}) {
    if (kind_name(k) == name) return k;
  }
  throw ParseError("unknown measurement kind '" + std::string(name) + "'");
}

namespace {

bool is_flow(MeasurementKind k) {
  return k == MeasurementKind::kPflow || k == MeasurementKind::kQflow;
}

bool canonical_less(const Measurement& a, const Measurement& b) {
  if (a.kind != b.kind) return a.kind < b.kind;
  return a.location < b.location;
}

}  // namespace

double MeasurementConfig::weight_for(MeasurementKind kind, const Location& loc) const {
  for (const WeightOverride& o : weights.overrides) {
    if (o.kind == kind && o.location == loc) return o.weight;
  }
  return kind == MeasurementKind::kV ? weights.default_v : weights.default_other;
}

void MeasurementConfig::validate(const Network& net) const {
  const int n = static_cast<int>(net.num_buses());
  const auto check_bus = [&](int b) {
    if (b < 0 || b >= n) throw LookupError("measurement bus outside network");
  };
  for (const auto* list : {&v_buses, &p_inj_buses, &q_inj_buses, &zero_inj_buses}) {
    for (int b : *list) check_bus(b);
  }
  for (int z : zero_inj_buses) {
    if (!net.buses()[z].is_zero_injection) {
      throw ValidationError("bus " + std::to_string(net.external_id(z)) +
                            " declared zero-injection but carries load or generation");
    }
    const auto in = [z](const std::vector<int>& v) {
      return std::find(v.begin(), v.end(), z) != v.end();
    };
    if (in(p_inj_buses) || in(q_inj_buses)) {
      throw ValidationError("bus " + std::to_string(net.external_id(z)) +
                            " is both a zero-injection constraint and an injection measurement");
    }
  }
  for (const auto* list : {&p_flow_branches, &q_flow_branches}) {
    for (const auto& [i, j] : *list) {
      check_bus(i);
      check_bus(j);
      net.branch_between(i, j);
    }
  }
  if (!(weights.default_v > 0.0) || !(weights.default_other > 0.0)) {
    throw ValidationError("measurement weights must be positive");
  }
  for (const WeightOverride& o : weights.overrides) {
    if (!(o.weight > 0.0)) throw ValidationError("measurement weights must be positive");
  }
}

std::vector<Measurement> MeasurementConfig::layout() const {
  std::vector<Measurement> out;
  const auto add_bus = [&](MeasurementKind k, const std::vector<int>& buses) {
    for (int b : buses) {
      Location loc{b, -1};
      out.push_back({k, loc, 0.0, weight_for(k, loc)});
    }
  };
  const auto add_flow = [&](MeasurementKind k, const std::vector<std::pair<int, int>>& pairs) {
    for (const auto& [i, j] : pairs) {
      Location loc{i, j};
      out.push_back({k, loc, 0.0, weight_for(k, loc)});
    }
  };
  add_bus(MeasurementKind::kV, v_buses);
  add_bus(MeasurementKind::kPinj, p_inj_buses);
  add_bus(MeasurementKind::kQinj, q_inj_buses);
  add_flow(MeasurementKind::kPflow, p_flow_branches);
  add_flow(MeasurementKind::kQflow, q_flow_branches);
  std::stable_sort(out.begin(), out.end(), canonical_less);
  return out;
}

namespace {

std::vector<int> parse_bus_list(const json& j, const char* key, const Network& net) {
  std::vector<int> out;
  if (!j.contains(key)) return out;
  const json& v = j.at(key);
  if (v.is_string()) {
    const std::string sel = v.get<std::string>();
    for (const Bus& b : net.buses()) {
      if (sel == "all") {
        out.push_back(b.index);
      } else if (sel == "gen") {
        if (b.kind != BusKind::kPq || b.gen_p != 0.0 || b.gen_q != 0.0) out.push_back(b.index);
      } else if (sel == "auto") {
        if (b.is_zero_injection) out.push_back(b.index);
      } else {
        throw ParseError(std::string("unknown selector '") + sel + "' for " + key);
      }
    }
  } else if (v.is_array()) {
    for (const json& e : v) {
      if (!e.is_number_integer()) throw ParseError(std::string(key) + " entries must be bus ids");
      out.push_back(net.index_of(e.get<int>()));
    }
  } else {
    throw ParseError(std::string(key) + " must be an array or selector");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::pair<int, int>> parse_flow_list(const json& j, const char* key,
                                                 const Network& net) {
  std::vector<std::pair<int, int>> out;
  if (!j.contains(key)) return out;
  const json& v = j.at(key);
  if (v.is_string()) {
    if (v.get<std::string>() != "all_from") {
      throw ParseError(std::string("unknown selector for ") + key);
    }
    for (const Branch& br : net.branches()) {
      if (br.in_service) out.emplace_back(br.from_bus, br.to_bus);
    }
  } else if (v.is_array()) {
    for (const json& e : v) {
      if (!e.is_array() || e.size() != 2) {
        throw ParseError(std::string(key) + " entries must be [from, to] pairs");
      }
      out.emplace_back(net.index_of(e[0].get<int>()), net.index_of(e[1].get<int>()));
    }
  } else {
    throw ParseError(std::string(key) + " must be an array or selector");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

MeasurementConfig parse_measurement_config(std::string_view json_text,
                                           const Network& net) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("measurement config: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("measurement config must be a JSON object");
  MeasurementConfig cfg;
  try {
    cfg.v_buses = parse_bus_list(j, "v", net);
    cfg.p_inj_buses = parse_bus_list(j, "p_inj", net);
    cfg.q_inj_buses = parse_bus_list(j, "q_inj", net);
    cfg.zero_inj_buses = parse_bus_list(j, "zero_inj", net);
    cfg.p_flow_branches = parse_flow_list(j, "p_flow", net);
    cfg.q_flow_branches = parse_flow_list(j, "q_flow", net);
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      cfg.weights.default_v = w.value("default_v", cfg.weights.default_v);
      cfg.weights.default_other = w.value("default_other", cfg.weights.default_other);
      for (const json& o : w.value("overrides", json::array())) {
        WeightOverride ov{parse_kind(o.at("kind").get<std::string>()), {}, o.at("weight").get<double>()};
        const json& loc = o.at("location");
        if (loc.is_array()) {
          ov.location = {net.index_of(loc.at(0).get<int>()), net.index_of(loc.at(1).get<int>())};
        } else {
          ov.location = {net.index_of(loc.get<int>()), -1};
        }
        cfg.weights.overrides.push_back(ov);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("measurement config: ") + e.what());
  }
  cfg.validate(net);
  return cfg;
}

MeasurementConfig load_measurement_config(const std::string& path, const Network& net) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open measurement config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_measurement_config(ss.str(), net);
}

MeasurementSet::MeasurementSet(std::vector<Measurement> measurements,
                               std::vector<int> zero_injection_buses,
                               std::optional<StateVector> truth)
    : measurements_(std::move(measurements)),
      zero_inj_(std::move(zero_injection_buses)),
      truth_(std::move(truth)) {
  std::stable_sort(measurements_.begin(), measurements_.end(), canonical_less);
  std::sort(zero_inj_.begin(), zero_inj_.end());
  for (const Measurement& m : measurements_) {
    if (!(m.weight > 0.0)) throw ValidationError("measurement weights must be positive");
    if (is_flow(m.kind) != m.location.is_branch()) {
      throw ValidationError("measurement location does not match its kind");
    }
  }
}

std::size_t MeasurementSet::index_of(MeasurementKind kind, const Location& loc) const {
  for (std::size_t k = 0; k < measurements_.size(); ++k) {
    if (measurements_[k].kind == kind && measurements_[k].location == loc) return k;
  }
  throw LookupError("measurement not in set");
}

Eigen::VectorXd MeasurementSet::values() const {
  Eigen::VectorXd z(static_cast<Eigen::Index>(size()));
  for (std::size_t k = 0; k < size(); ++k) z(k) = measurements_[k].value;
  return z;
}

Eigen::VectorXd MeasurementSet::weights() const {
  Eigen::VectorXd w(static_cast<Eigen::Index>(size()));
  for (std::size_t k = 0; k < size(); ++k) w(k) = measurements_[k].weight;
  return w;
}

MeasurementSet MeasurementSet::with_values(const Eigen::VectorXd& z) const {
  if (static_cast<std::size_t>(z.size()) != size()) throw ShapeError("value vector length mismatch");
  MeasurementSet out = *this;
  for (std::size_t k = 0; k < size(); ++k) out.measurements_[k].value = z(k);
  return out;
}

MeasurementSet MeasurementSet::with_weights(const Eigen::VectorXd& w) const {
  if (static_cast<std::size_t>(w.size()) != size()) throw ShapeError("weight vector length mismatch");
  MeasurementSet out = *this;
  for (std::size_t k = 0; k < size(); ++k) {
    if (!(w(k) > 0.0)) throw ValidationError("measurement weights must be positive");
    out.measurements_[k].weight = w(k);
  }
  return out;
}

std::string measurement_label(const Network& net, const Measurement& m) {
  std::string out(kind_name(m.kind));
  out += "_" + std::to_string(net.external_id(m.location.bus));
  if (m.location.is_branch()) out += "-" + std::to_string(net.external_id(m.location.to_bus));
  return out;
}

// ---------------------------------------------------------------------------
// Power-flow oracle

Eigen::VectorXcd bus_injections(const Network& net, const StateVector& s) {
  const AdmittanceMatrix& y = net.admittance();
  const Eigen::Index n = y.size();
  Eigen::MatrixXcd ybus(n, n);
  ybus.real() = y.g;
  ybus.imag() = y.b;
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(s.v(i), s.theta(i));
  const Eigen::VectorXcd current = ybus * v;
  return v.cwiseProduct(current.conjugate());
}

std::complex<double> branch_flow(const Network& net, const StateVector& s,
                                 std::size_t k, bool from_end) {
  const Branch& br = net.branches().at(k);
  const BranchAdmittance a = branch_admittance(br);
  const Complex vf = std::polar(s.v(br.from_bus), s.theta(br.from_bus));
  const Complex vt = std::polar(s.v(br.to_bus), s.theta(br.to_bus));
  if (from_end) return vf * std::conj(a.ff * vf + a.ft * vt);
  return vt * std::conj(a.tf * vf + a.tt * vt);
}

PowerFlowResult solve_power_flow(const Network& net, const StateVector& start,
                                 const PowerFlowOptions& opts) {
  const auto n = static_cast<Eigen::Index>(net.num_buses());
  if (start.v.size() != n || start.theta.size() != n) {
    throw ShapeError("power-flow start state has wrong dimension");
  }
  if ((start.v.array() <= 0.0).any()) throw DomainError("start voltages must be positive");

  std::vector<Eigen::Index> pvpq, pq;
  Eigen::VectorXcd s_spec(n);
  for (const Bus& b : net.buses()) {
    s_spec(b.index) = Complex{b.gen_p - b.demand_p, b.gen_q - b.demand_q};
    if (b.kind != BusKind::kSlack) pvpq.push_back(b.index);
    if (b.kind == BusKind::kPq) pq.push_back(b.index);
  }

  StateVector s = start;
  for (const Bus& b : net.buses()) {
    if (b.kind != BusKind::kPq) s.v(b.index) = b.v_setpoint;
  }
  s.theta(net.slack()) = 0.0;

  const AdmittanceMatrix& y = net.admittance();
  Eigen::MatrixXcd ybus(n, n);
  ybus.real() = y.g;
  ybus.imag() = y.b;

  const auto npv = static_cast<Eigen::Index>(pvpq.size());
  const auto npq = static_cast<Eigen::Index>(pq.size());
  const auto mismatch = [&](const StateVector& st) {
    const Eigen::VectorXcd ds = bus_injections(net, st) - s_spec;
    Eigen::VectorXd f(npv + npq);
    for (Eigen::Index k = 0; k < npv; ++k) f(k) = ds(pvpq[k]).real();
    for (Eigen::Index k = 0; k < npq; ++k) f(npv + k) = ds(pq[k]).imag();
    return f;
  };

  PowerFlowResult out;
  Eigen::VectorXd f = mismatch(s);
  double norm = f.size() ? f.lpNorm<Eigen::Infinity>() : 0.0;
  int iter = 0;
  while (norm > opts.tol) {
    if (iter >= opts.max_iter) {
      throw ConvergenceError("power flow did not converge in " +
                                 std::to_string(opts.max_iter) +
                                 " iterations (mismatch " + std::to_string(norm) + ")",
                             norm);
    }
    Eigen::VectorXcd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(s.v(i), s.theta(i));
    const Eigen::VectorXcd ibus = ybus * v;
    const Eigen::VectorXcd vnorm = v.array() / v.array().abs();
    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V));
    // dS/dVm = diag(V) conj(Y diag(Vnorm)) + conj(diag(I)) diag(Vnorm).
    Eigen::MatrixXcd ds_dva = -(ybus * v.asDiagonal());
    ds_dva.diagonal() += ibus;
    ds_dva = Complex{0.0, 1.0} * (v.asDiagonal() * ds_dva.conjugate());
    Eigen::MatrixXcd ds_dvm = v.asDiagonal() * (ybus * vnorm.asDiagonal()).conjugate();
    ds_dvm.diagonal() += ibus.conjugate().cwiseProduct(vnorm);

    Eigen::MatrixXd jac(npv + npq, npv + npq);
    for (Eigen::Index r = 0; r < npv; ++r) {
      for (Eigen::Index c = 0; c < npv; ++c) jac(r, c) = ds_dva(pvpq[r], pvpq[c]).real();
      for (Eigen::Index c = 0; c < npq; ++c) jac(r, npv + c) = ds_dvm(pvpq[r], pq[c]).real();
    }
    for (Eigen::Index r = 0; r < npq; ++r) {
      for (Eigen::Index c = 0; c < npv; ++c) jac(npv + r, c) = ds_dva(pq[r], pvpq[c]).imag();
      for (Eigen::Index c = 0; c < npq; ++c) jac(npv + r, npv + c) = ds_dvm(pq[r], pq[c]).imag();
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-14)) {
      throw SingularityError("power-flow Jacobian is singular", rcond);
    }
    const Eigen::VectorXd dx = lu.solve(-f);
    for (Eigen::Index k = 0; k < npv; ++k) s.theta(pvpq[k]) += dx(k);
    for (Eigen::Index k = 0; k < npq; ++k) s.v(pq[k]) += dx(npv + k);
    ++iter;
    f = mismatch(s);
    norm = f.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(norm)) throw ConvergenceError("power flow diverged", norm);
  }
  out.state = s;
  out.iterations = iter;
  out.mismatch = norm;
  return out;
}

// ---------------------------------------------------------------------------
// Measurement functions

PowerExpr measurement_expr(const Network& net, MeasurementKind kind, const Location& loc) {
  const int n = static_cast<int>(net.num_buses());
  if (loc.bus < 0 || loc.bus >= n || loc.to_bus >= n) {
    throw LookupError("measurement location outside network");
  }
  switch (kind) {
    case MeasurementKind::kV: {
      PowerExpr e;  // unused for V; callers special-case magnitudes
      e.bus = loc.bus;
      return e;
    }
    case MeasurementKind::kPinj: return injection_p_expr(net, loc.bus);
    case MeasurementKind::kQinj: return injection_q_expr(net, loc.bus);
    case MeasurementKind::kPflow: return flow_p_expr(net, loc.bus, loc.to_bus);
    case MeasurementKind::kQflow: return flow_q_expr(net, loc.bus, loc.to_bus);
  }
  throw LookupError("unknown measurement kind");
}

Eigen::VectorXd measurement_function(const StateVector& s, const Network& net,
                                     std::span<const Measurement> ms) {
  const auto n = static_cast<Eigen::Index>(net.num_buses());
  if (s.v.size() != n || s.theta.size() != n) throw ShapeError("state dimension mismatch");
  Eigen::VectorXd h(static_cast<Eigen::Index>(ms.size()));
  for (std::size_t k = 0; k < ms.size(); ++k) {
    const Measurement& m = ms[k];
    if (m.kind == MeasurementKind::kV) {
      if (m.location.bus < 0 || m.location.bus >= n) throw LookupError("V measurement bus outside network");
      h(k) = s.v(m.location.bus);
    } else {
      h(k) = measurement_expr(net, m.kind, m.location).value(s);
    }
  }
  return h;
}

Eigen::VectorXd measurement_function(const StateVector& s, const Network& net,
                                     const MeasurementConfig& cfg) {
  const auto layout = cfg.layout();
  return measurement_function(s, net, std::span<const Measurement>(layout));
}

Eigen::MatrixXd measurement_jacobian(const StateVector& s, const Network& net,
                                     std::span<const Measurement> ms) {
  const auto nbus = net.num_buses();
  const VarMap map = full_bus_map(nbus);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ms.size()),
                                              static_cast<Eigen::Index>(2 * nbus));
  for (std::size_t k = 0; k < ms.size(); ++k) {
    const Measurement& m = ms[k];
    if (m.kind == MeasurementKind::kV) {
      jac(k, m.location.bus) = 1.0;
    } else {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(jac.cols());
      measurement_expr(net, m.kind, m.location).add_gradient(s, map, 1.0, row);
      jac.row(k) = row.transpose();
    }
  }
  return jac;
}

MeasurementSet synthesize_measurements(const Network& net, const MeasurementConfig& cfg,
                                       double noise_sigma_scale, std::uint64_t seed) {
  if (!(noise_sigma_scale >= 0.0)) throw DomainError("noise scale must be non-negative");
  cfg.validate(net);
  StateVector start = StateVector::flat(net.num_buses());
  const PowerFlowResult pf = solve_power_flow(net, start);

  std::vector<Measurement> ms = cfg.layout();
  const Eigen::VectorXd h = measurement_function(pf.state, net, std::span<const Measurement>(ms));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < ms.size(); ++k) {
    // Draw even when noiseless so the stream position never depends on scale.
    const double e = normal(rng);
    ms[k].value = h(k) + noise_sigma_scale * e / std::sqrt(ms[k].weight);
  }
  return MeasurementSet(std::move(ms), cfg.zero_inj_buses, pf.state);
}

Redundancy redundancy(const Network& net, const MeasurementSet& ms) {
  Redundancy r;
  r.measurements = ms.size();
  r.zero_constraints = 2 * ms.zero_injection_buses().size();
  r.states = 2 * net.num_buses() - 1;
  r.ratio = static_cast<double>(r.measurements + r.zero_constraints) /
            static_cast<double>(r.states);
  r.dof = static_cast<long>(r.measurements + r.zero_constraints) -
          static_cast<long>(r.states);
  return r;
}

}  // namespace sevuln
