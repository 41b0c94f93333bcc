#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sevuln/network.hpp"
#include "sevuln/power_expr.hpp"

namespace sevuln {

// Enumerator order is the canonical block order of a measurement vector.
enum class MeasurementKind { kV = 0, kPinj = 1, kQinj = 2, kPflow = 3, kQflow = 4 };

std::string_view kind_name(MeasurementKind kind);
MeasurementKind parse_kind(std::string_view name);

/// Internal bus index, plus the far end for flows (metered at `bus`).
struct Location {
  int bus = 0;
  int to_bus = -1;

  auto operator<=>(const Location&) const = default;
  bool is_branch() const { return to_bus >= 0; }
};

struct Measurement {
  MeasurementKind kind = MeasurementKind::kV;
  Location location;
  double value = 0.0;
  double weight = 1.0;
};

struct WeightOverride {
  MeasurementKind kind;
  Location location;
  double weight;
};

struct WeightConfig {
  double default_v = 1.0e4;
  double default_other = 2.5e3;
  std::vector<WeightOverride> overrides;
};

/// Which quantities are metered. Bus lists hold internal indices.
struct MeasurementConfig {
  std::vector<int> v_buses;
  std::vector<int> p_inj_buses;
  std::vector<int> q_inj_buses;
  std::vector<int> zero_inj_buses;
  std::vector<std::pair<int, int>> p_flow_branches;
  std::vector<std::pair<int, int>> q_flow_branches;
  WeightConfig weights;

  double weight_for(MeasurementKind kind, const Location& loc) const;

  /// Throws ValidationError/LookupError when the config does not fit `net`.
  void validate(const Network& net) const;

  /// Canonically ordered measurement skeleton (values left at zero).
  std::vector<Measurement> layout() const;
};

/// Parses the JSON measurement configuration. Bus ids are external ids;
/// besides explicit arrays, the selectors "all", "gen" (bus lists) and
/// "all_from" (flow lists) and "auto" (zero_inj) are accepted.
MeasurementConfig parse_measurement_config(std::string_view json_text,
                                           const Network& net);
MeasurementConfig load_measurement_config(const std::string& path,
                                          const Network& net);

/// Ordered measurement vector z with its zero-injection declarations.
class MeasurementSet {
 public:
  MeasurementSet() = default;
  /// Stable-sorts into canonical order: V, Pinj, Qinj, Pflow, Qflow blocks,
  /// each ascending by location.
  MeasurementSet(std::vector<Measurement> measurements,
                 std::vector<int> zero_injection_buses,
                 std::optional<StateVector> truth = std::nullopt);

  const std::vector<Measurement>& measurements() const { return measurements_; }
  const std::vector<int>& zero_injection_buses() const { return zero_inj_; }
  const std::optional<StateVector>& truth() const { return truth_; }

  std::size_t size() const { return measurements_.size(); }
  const Measurement& at(std::size_t idx) const { return measurements_.at(idx); }
  /// Canonical index of the first measurement of this kind and location.
  std::size_t index_of(MeasurementKind kind, const Location& loc) const;

  Eigen::VectorXd values() const;
  Eigen::VectorXd weights() const;

  MeasurementSet with_values(const Eigen::VectorXd& z) const;
  MeasurementSet with_weights(const Eigen::VectorXd& w) const;

 private:
  std::vector<Measurement> measurements_;
  std::vector<int> zero_inj_;
  std::optional<StateVector> truth_;
};

/// Human-readable id such as "V_1", "Pinj_3", "Qflow_3-4" (external ids).
std::string measurement_label(const Network& net, const Measurement& m);

struct PowerFlowOptions {
  double tol = 1e-10;
  int max_iter = 30;
};

struct PowerFlowResult {
  StateVector state;
  int iterations = 0;
  double mismatch = 0.0;
};

/// Newton-Raphson AC power flow in complex polar form. Slack angle is 0,
/// slack and PV magnitudes are held at their setpoints.
PowerFlowResult solve_power_flow(const Network& net, const StateVector& start,
                                 const PowerFlowOptions& opts = {});

/// Complex bus injections S = V conj(Y V), computed in complex arithmetic.
Eigen::VectorXcd bus_injections(const Network& net, const StateVector& s);
/// Complex power entering branch k at its from (or to) end.
std::complex<double> branch_flow(const Network& net, const StateVector& s,
                                 std::size_t k, bool from_end);

PowerExpr measurement_expr(const Network& net, MeasurementKind kind,
                           const Location& loc);

/// h(x) for the given measurements, in their order.
Eigen::VectorXd measurement_function(const StateVector& s, const Network& net,
                                     std::span<const Measurement> ms);
Eigen::VectorXd measurement_function(const StateVector& s, const Network& net,
                                     const MeasurementConfig& cfg);

/// Analytic dh/d(v, theta) over the full (v_0.., theta_0..) layout.
Eigen::MatrixXd measurement_jacobian(const StateVector& s, const Network& net,
                                     std::span<const Measurement> ms);

/// z = h(truth) + e with e_l ~ N(0, noise_sigma_scale / sqrt(w_l)).
MeasurementSet synthesize_measurements(const Network& net,
                                       const MeasurementConfig& cfg,
                                       double noise_sigma_scale,
                                       std::uint64_t seed);

struct Redundancy {
  std::size_t measurements = 0;
  std::size_t zero_constraints = 0;
  std::size_t states = 0;
  double ratio = 0.0;
  long dof = 0;
};

/// Counts zero-injection constraints as pseudo-measurements.
Redundancy redundancy(const Network& net, const MeasurementSet& ms);

}  // namespace sevuln
