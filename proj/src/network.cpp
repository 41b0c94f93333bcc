#include "sevuln/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

#include "sevuln/errors.hpp"

namespace sevuln {

namespace {

using Complex = std::complex<double>;

AdmittanceMatrix assemble(std::size_t nbus, const std::vector<Branch>& branches) {
  const auto n = static_cast<Eigen::Index>(nbus);
  AdmittanceMatrix y{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
  for (const Branch& br : branches) {
    if (!br.in_service) continue;
    const BranchAdmittance a = branch_admittance(br);
    const int f = br.from_bus;
    const int t = br.to_bus;
    const auto add = [&](int i, int j, Complex v) {
      y.g(i, j) += v.real();
      y.b(i, j) += v.imag();
    };
    add(f, f, a.ff);
    add(f, t, a.ft);
    add(t, f, a.tf);
    add(t, t, a.tt);
  }
  return y;
}

struct Table {
  std::vector<std::vector<double>> rows;
  std::vector<int> lines;
};

std::string strip_comment(const std::string& line) {
  const auto pos = line.find('%');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

double parse_number(const std::string& tok, int line) {
  if (tok == "Inf" || tok == "inf") return HUGE_VAL;
  if (tok == "-Inf" || tok == "-inf") return -HUGE_VAL;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ParseError("malformed numeric field '" + tok + "'", line);
  }
  if (used != tok.size()) {
    throw ParseError("malformed numeric field '" + tok + "'", line);
  }
  return v;
}

struct CaseTables {
  std::optional<double> base_mva;
  std::map<std::string, Table> tables;
};

CaseTables tokenize_case(std::string_view text) {
  CaseTables out;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  Table* current = nullptr;
  std::vector<double> row;
  int row_line = 0;

  const auto flush_row = [&]() {
    if (!row.empty()) {
      current->rows.push_back(row);
      current->lines.push_back(row_line);
      row.clear();
    }
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = strip_comment(raw);
    if (current == nullptr) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string lhs = line.substr(0, eq);
      lhs.erase(std::remove_if(lhs.begin(), lhs.end(), ::isspace), lhs.end());
      std::string rhs = line.substr(eq + 1);
      if (lhs == "mpc.baseMVA") {
        rhs.erase(std::remove(rhs.begin(), rhs.end(), ';'), rhs.end());
        rhs.erase(std::remove_if(rhs.begin(), rhs.end(), ::isspace), rhs.end());
        out.base_mva = parse_number(rhs, line_no);
        continue;
      }
      const auto open = rhs.find('[');
      if (lhs.rfind("mpc.", 0) != 0 || open == std::string::npos) continue;
      current = &out.tables[lhs.substr(4)];
      line = rhs.substr(open + 1);
    }
    // Inside a matrix block: rows end at ';' or newline, the block at ']'.
    std::string token;
    bool closed = false;
    const auto flush_token = [&]() {
      if (!token.empty()) {
        if (row.empty()) row_line = line_no;
        row.push_back(parse_number(token, line_no));
        token.clear();
      }
    };
    for (char c : line) {
      if (c == ']') {
        flush_token();
        flush_row();
        closed = true;
        break;
      }
      if (c == ';') {
        flush_token();
        flush_row();
      } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
        flush_token();
      } else {
        token.push_back(c);
      }
    }
    if (!closed) {
      flush_token();
      flush_row();
    } else {
      current = nullptr;
    }
  }
  if (current != nullptr) throw ParseError("unterminated matrix block", line_no);
  return out;
}

const Table& require_table(const CaseTables& t, const std::string& name,
                           std::size_t min_cols) {
  const auto it = t.tables.find(name);
  if (it == t.tables.end()) throw ParseError("missing table mpc." + name);
  for (std::size_t k = 0; k < it->second.rows.size(); ++k) {
    if (it->second.rows[k].size() < min_cols) {
      throw ParseError("mpc." + name + " record has " +
                           std::to_string(it->second.rows[k].size()) +
                           " columns, expected at least " +
                           std::to_string(min_cols),
                       it->second.lines[k]);
    }
  }
  return it->second;
}

int as_int(double v, int line) {
  if (v != std::floor(v)) throw ParseError("expected integer field", line);
  return static_cast<int>(v);
}

}  // namespace

BranchAdmittance branch_admittance(const Branch& br) {
  const Complex z{br.r, br.x};
  if (z == Complex{}) {
    throw SingularBranchError("branch has zero series impedance");
  }
  const Complex y = 1.0 / z;
  const Complex ysh{0.0, br.b_sh / 2.0};
  const double tap = br.tap;
  return {(y + ysh) / (tap * tap), -y / tap, -y / tap, y + ysh};
}

Network::Network(std::vector<Bus> buses, std::vector<Branch> branches,
                 double base_mva)
    : buses_(std::move(buses)),
      branches_(std::move(branches)),
      base_mva_(base_mva) {
  if (buses_.empty()) throw ValidationError("network has no buses");
  if (!(base_mva_ > 0.0)) throw ValidationError("baseMVA must be positive");

  int slacks = 0;
  for (std::size_t i = 0; i < buses_.size(); ++i) {
    Bus& b = buses_[i];
    if (b.index != static_cast<int>(i)) {
      throw ValidationError("bus indices must be contiguous from 0");
    }
    if (b.kind == BusKind::kSlack) {
      slack_ = static_cast<int>(i);
      ++slacks;
    }
    if (b.is_zero_injection && (b.demand_p != 0.0 || b.demand_q != 0.0 ||
                                b.gen_p != 0.0 || b.gen_q != 0.0 ||
                                b.kind != BusKind::kPq)) {
      throw ValidationError("bus " + std::to_string(b.external_id) +
                            " flagged zero-injection but has injections");
    }
    if (!(b.v_setpoint > 0.0)) {
      throw ValidationError("bus " + std::to_string(b.external_id) +
                            " has non-positive voltage setpoint");
    }
  }
  if (slacks != 1) {
    throw ValidationError("expected exactly one slack bus, found " +
                          std::to_string(slacks));
  }
  {
    std::vector<int> ids;
    for (const Bus& b : buses_) ids.push_back(b.external_id);
    std::sort(ids.begin(), ids.end());
    const auto dup = std::adjacent_find(ids.begin(), ids.end());
    if (dup != ids.end()) {
      throw ValidationError("duplicate bus id " + std::to_string(*dup));
    }
  }

  const int n = static_cast<int>(buses_.size());
  neighbors_.assign(buses_.size(), {});
  for (const Branch& br : branches_) {
    if (br.from_bus < 0 || br.from_bus >= n || br.to_bus < 0 || br.to_bus >= n) {
      throw ValidationError("branch references a bus outside the network");
    }
    if (br.from_bus == br.to_bus) {
      throw ValidationError("branch connects bus " +
                            std::to_string(external_id(br.from_bus)) +
                            " to itself");
    }
    if (!(br.tap > 0.0)) throw ValidationError("branch tap must be positive");
    if (br.r == 0.0 && br.x == 0.0) {
      throw SingularBranchError(
          "branch " + std::to_string(external_id(br.from_bus)) + "-" +
          std::to_string(external_id(br.to_bus)) + " has zero series impedance");
    }
    if (!br.in_service) continue;
    auto& nf = neighbors_[br.from_bus];
    auto& nt = neighbors_[br.to_bus];
    if (std::find(nf.begin(), nf.end(), br.to_bus) == nf.end()) nf.push_back(br.to_bus);
    if (std::find(nt.begin(), nt.end(), br.from_bus) == nt.end()) nt.push_back(br.from_bus);
  }
  for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());

  std::vector<char> seen(buses_.size(), 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  std::size_t reached = 1;
  while (!frontier.empty()) {
    const int i = frontier.front();
    frontier.pop();
    for (int j : neighbors_[i]) {
      if (!seen[j]) {
        seen[j] = 1;
        ++reached;
        frontier.push(j);
      }
    }
  }
  if (reached != buses_.size()) {
    for (std::size_t i = 0; i < buses_.size(); ++i) {
      if (!seen[i]) {
        throw ValidationError("network is disconnected: bus " +
                              std::to_string(buses_[i].external_id) +
                              " is not reachable");
      }
    }
  }

  admittance_ = assemble(buses_.size(), branches_);
}

int Network::index_of(int external) const {
  for (const Bus& b : buses_) {
    if (b.external_id == external) return b.index;
  }
  throw LookupError("unknown bus " + std::to_string(external));
}

std::size_t Network::branch_between(int i, int j) const {
  std::optional<std::size_t> found;
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    const Branch& br = branches_[k];
    if (!br.in_service) continue;
    if ((br.from_bus == i && br.to_bus == j) || (br.from_bus == j && br.to_bus == i)) {
      if (found) {
        throw LookupError("parallel branches between buses " +
                          std::to_string(external_id(i)) + " and " +
                          std::to_string(external_id(j)));
      }
      found = k;
    }
  }
  if (!found) {
    throw LookupError("no in-service branch between buses " +
                      std::to_string(external_id(i)) + " and " +
                      std::to_string(external_id(j)));
  }
  return *found;
}

AdmittanceMatrix build_admittance(const Network& net) {
  return assemble(net.num_buses(), net.branches());
}

Network parse_case(std::string_view text) {
  const CaseTables t = tokenize_case(text);
  if (!t.base_mva) throw ParseError("missing mpc.baseMVA");
  const double base = *t.base_mva;

  const Table& bus_t = require_table(t, "bus", 4);
  const Table& gen_t = require_table(t, "gen", 6);
  const Table& br_t = require_table(t, "branch", 5);

  std::vector<Bus> buses;
  std::map<int, int> ext_to_int;
  for (std::size_t k = 0; k < bus_t.rows.size(); ++k) {
    const auto& row = bus_t.rows[k];
    const int line = bus_t.lines[k];
    Bus b;
    b.index = static_cast<int>(k);
    b.external_id = as_int(row[0], line);
    const int type = as_int(row[1], line);
    switch (type) {
      case 1: b.kind = BusKind::kPq; break;
      case 2: b.kind = BusKind::kPv; break;
      case 3: b.kind = BusKind::kSlack; break;
      default:
        throw ValidationError("bus " + std::to_string(b.external_id) +
                              ": unsupported bus type " + std::to_string(type));
    }
    b.demand_p = row[2] / base;
    b.demand_q = row[3] / base;
    if (row.size() >= 6 && (row[4] != 0.0 || row[5] != 0.0)) {
      throw ValidationError("bus " + std::to_string(b.external_id) +
                            ": bus shunts are not supported");
    }
    if (!ext_to_int.emplace(b.external_id, b.index).second) {
      throw ValidationError("duplicate bus id " + std::to_string(b.external_id));
    }
    buses.push_back(b);
  }

  std::vector<char> has_gen(buses.size(), 0);
  for (std::size_t k = 0; k < gen_t.rows.size(); ++k) {
    const auto& row = gen_t.rows[k];
    const int line = gen_t.lines[k];
    const int ext = as_int(row[0], line);
    const auto it = ext_to_int.find(ext);
    if (it == ext_to_int.end()) {
      throw ValidationError("generator references unknown bus " + std::to_string(ext));
    }
    if (row.size() >= 8 && row[7] <= 0.0) continue;
    Bus& b = buses[it->second];
    b.gen_p += row[1] / base;
    b.gen_q += row[2] / base;
    if (!has_gen[it->second]) b.v_setpoint = row[5];
    has_gen[it->second] = 1;
  }

  std::vector<Branch> branches;
  for (std::size_t k = 0; k < br_t.rows.size(); ++k) {
    const auto& row = br_t.rows[k];
    const int line = br_t.lines[k];
    const int f = as_int(row[0], line);
    const int to = as_int(row[1], line);
    for (int ext : {f, to}) {
      if (!ext_to_int.count(ext)) {
        throw ValidationError("branch " + std::to_string(f) + "-" +
                              std::to_string(to) + " references unknown bus " +
                              std::to_string(ext));
      }
    }
    Branch br;
    br.from_bus = ext_to_int[f];
    br.to_bus = ext_to_int[to];
    br.r = row[2];
    br.x = row[3];
    br.b_sh = row[4];
    br.tap = (row.size() >= 9 && row[8] != 0.0) ? row[8] : 1.0;
    if (row.size() >= 10 && row[9] != 0.0) {
      throw ValidationError("branch " + std::to_string(f) + "-" + std::to_string(to) +
                            ": phase-shifting transformers are not supported");
    }
    br.in_service = row.size() < 11 || row[10] > 0.0;
    branches.push_back(br);
  }

  for (std::size_t i = 0; i < buses.size(); ++i) {
    Bus& b = buses[i];
    if (b.kind == BusKind::kPv && !has_gen[i]) b.kind = BusKind::kPq;
    b.is_zero_injection = b.kind == BusKind::kPq && !has_gen[i] &&
                          b.demand_p == 0.0 && b.demand_q == 0.0;
  }
  return Network(std::move(buses), std::move(branches), base);
}

Network load_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open case file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str());
}

Network scale_demands(const Network& net, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw DomainError("demand scale factor must be positive");
  }
  std::vector<Bus> buses = net.buses();
  for (Bus& b : buses) {
    b.demand_p *= factor;
    b.demand_q *= factor;
    if (b.kind == BusKind::kPv) b.gen_p *= factor;
  }
  return Network(std::move(buses), net.branches(), net.base_mva());
}

}  // namespace sevuln
