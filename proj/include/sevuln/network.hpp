#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace sevuln {

enum class BusKind { kSlack, kPv, kPq };

/// Bus data in per-unit on the system base. `index` is the contiguous
/// internal number; `external_id` is the id used in the case file.
struct Bus {
  int index = 0;
  int external_id = 0;
  BusKind kind = BusKind::kPq;
  double demand_p = 0.0;
  double demand_q = 0.0;
  double gen_p = 0.0;
  double gen_q = 0.0;
  double v_setpoint = 1.0;
  bool is_zero_injection = false;
};

/// Pi-model branch between internal bus indices. The tap sits on the from side.
struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_sh = 0.0;  // total line-charging susceptance
  double tap = 1.0;
  bool in_service = true;
};

struct AdmittanceMatrix {
  Eigen::MatrixXd g;
  Eigen::MatrixXd b;

  Eigen::Index size() const { return g.rows(); }
  std::complex<double> operator()(Eigen::Index i, Eigen::Index j) const {
    return {g(i, j), b(i, j)};
  }
};

/// The four entries of a branch's two-port admittance:
/// [I_f; I_t] = [[ff, ft], [tf, tt]] [V_f; V_t].
struct BranchAdmittance {
  std::complex<double> ff, ft, tf, tt;
};

BranchAdmittance branch_admittance(const Branch& br);

class Network {
 public:
  /// Validates the data and caches the admittance matrix. Throws
  /// ValidationError / SingularBranchError.
  Network(std::vector<Bus> buses, std::vector<Branch> branches,
          double base_mva);

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  double base_mva() const { return base_mva_; }
  const AdmittanceMatrix& admittance() const { return admittance_; }

  std::size_t num_buses() const { return buses_.size(); }
  int slack() const { return slack_; }

  /// Internal index for an external bus id; throws LookupError.
  int index_of(int external_id) const;
  int external_id(int index) const { return buses_.at(index).external_id; }

  /// In-service branch joining two internal buses, in either orientation.
  /// Throws LookupError when absent or ambiguous (parallel circuits).
  std::size_t branch_between(int i, int j) const;

  /// Internal indices adjacent to bus i over in-service branches.
  const std::vector<int>& neighbors(int i) const { return neighbors_.at(i); }

 private:
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  double base_mva_;
  int slack_ = 0;
  AdmittanceMatrix admittance_;
  std::vector<std::vector<int>> neighbors_;
};

/// Parses the supported subset of the MATPOWER case format: `mpc.baseMVA`,
/// and the `mpc.bus`, `mpc.gen`, `mpc.branch` tables. Everything else is
/// ignored. Powers are converted to per-unit on baseMVA.
Network parse_case(std::string_view text);

Network load_case_file(const std::string& path);

AdmittanceMatrix build_admittance(const Network& net);

/// Multiplies every demand by `factor`; PV-bus scheduled generation follows
/// the same factor and the slack absorbs the remaining mismatch.
Network scale_demands(const Network& net, double factor);

}  // namespace sevuln
