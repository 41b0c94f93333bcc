#include "sevuln/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sevuln/errors.hpp"

namespace sevuln {

void ScoreParams::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw DomainError("gamma must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in [0, 1]");
  if (!(beta_s > 0.0) || !(beta_l > 0.0)) throw DomainError("beta must be positive");
}

double s_shape(double xi, double beta) {
  if (std::isnan(xi) || std::isnan(beta)) throw DomainError("s_shape argument is NaN");
  if (!(beta > 0.0)) throw DomainError("s_shape exponent must be positive");
  if (xi <= 0.0) return 0.0;
  if (xi >= 1.0) return 1.0;
  const double a = std::pow(xi, beta);
  const double b = std::pow(1.0 - xi, beta);
  return a / (a + b);
}

Eigen::VectorXd s_score_from_raw(const Eigen::VectorXd& raw, const ScoreParams& params) {
  params.validate();
  if (raw.size() == 0) return raw;
  if (!raw.allFinite()) throw DomainError("non-finite stealth input");
  const double mx = raw.cwiseAbs().maxCoeff();
  if (!(mx > params.degenerate_tol)) {
    throw DegenerateError(
        "objective is insensitive to every measurement (max |z dJ/dz| = " + std::to_string(mx) +
        "); residuals are zero, use the second-order surrogate (--consistent)");
  }
  Eigen::VectorXd out(raw.size());
  for (Eigen::Index l = 0; l < raw.size(); ++l) {
    const double xi = std::pow(params.gamma, -std::abs(raw(l)) / mx);
    out(l) = s_shape(xi, params.beta_s);
  }
  return out;
}

Eigen::VectorXd s_score(const Eigen::VectorXd& dj_dz, const Eigen::VectorXd& z,
                        const ScoreParams& params) {
  if (dj_dz.size() != z.size()) throw ShapeError("dJ/dz and z lengths differ");
  return s_score_from_raw(z.cwiseProduct(dj_dz).cwiseAbs(), params);
}

Eigen::VectorXd column_norms(const Eigen::MatrixXd& dx_dz, NormKind norm) {
  Eigen::VectorXd out(dx_dz.cols());
  for (Eigen::Index l = 0; l < dx_dz.cols(); ++l) {
    out(l) = norm == NormKind::kTwo ? dx_dz.col(l).norm()
                                    : dx_dz.col(l).lpNorm<Eigen::Infinity>();
  }
  return out;
}

Eigen::VectorXd l_score(const Eigen::MatrixXd& dx_dz, const ScoreParams& params) {
  params.validate();
  if (!dx_dz.allFinite()) throw DomainError("non-finite dx/dz");
  const Eigen::VectorXd raw = column_norms(dx_dz, params.norm);
  if (raw.size() == 0) return raw;
  const double mx = raw.maxCoeff();
  if (!(mx > 0.0)) throw DegenerateError("dx/dz is identically zero");
  Eigen::VectorXd out(raw.size());
  for (Eigen::Index l = 0; l < raw.size(); ++l) out(l) = s_shape(raw(l) / mx, params.beta_l);
  return out;
}

Eigen::VectorXd v_score(const Eigen::VectorXd& s, const Eigen::VectorXd& l, double alpha) {
  if (s.size() != l.size()) throw ShapeError("S and L score lengths differ");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in [0, 1]");
  return alpha * s + (1.0 - alpha) * l;
}

Eigen::VectorXd stealth_surrogate(const EstimationProblem& problem,
                                  const SensitivityResult& sens) {
  const MeasurementSet& ms = problem.measurements();
  const auto& var = problem.layout().measured_var;
  Eigen::VectorXd out(static_cast<Eigen::Index>(ms.size()));
  for (std::size_t l = 0; l < ms.size(); ++l) {
    const Measurement& m = ms.at(l);
    const auto col = static_cast<Eigen::Index>(l);
    const double curvature = 2.0 * m.weight * (1.0 - sens.dx_dz(var[l], col));
    out(col) = m.value * m.value * curvature;
  }
  return out;
}

Ranking rank_measurements(const ScoreTable& table, double threshold) {
  Ranking r;
  r.order.resize(table.rows.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    const double va = table.rows[a].v_score;
    const double vb = table.rows[b].v_score;
    if (va != vb) return va > vb;
    return table.rows[a].index < table.rows[b].index;
  });
  for (std::size_t k : r.order) {
    if (table.rows[k].v_score >= threshold) r.vulnerable.push_back(table.rows[k].index);
  }
  for (std::size_t& k : r.order) k = table.rows[k].index;
  return r;
}

AssessmentResult run_algorithm_1(const EstimationProblem& problem, const EstimationResult& est,
                                 const ScoreParams& params, StealthInput input,
                                 const AssemblyOptions& assembly) {
  params.validate();
  AssessmentResult out;
  out.estimate = est;
  out.blocks = assemble_kkt_blocks(problem, est, assembly);
  out.sensitivities = measurement_sensitivities(out.blocks);
  const SensitivityResult& sens = out.sensitivities;
  const MeasurementSet& ms = problem.measurements();

  const Eigen::VectorXd raw_s = input == StealthInput::kResidual
                                    ? Eigen::VectorXd(ms.values().cwiseProduct(sens.dj_dz).cwiseAbs())
                                    : Eigen::VectorXd(stealth_surrogate(problem, sens).cwiseAbs());
  const Eigen::VectorXd s = s_score_from_raw(raw_s, params);
  const Eigen::VectorXd raw_l = column_norms(sens.dx_dz, params.norm);
  const Eigen::VectorXd l = l_score(sens.dx_dz, params);
  const Eigen::VectorXd v = v_score(s, l, params.alpha);

  out.table.input = input;
  const Network& net = problem.network();
  for (std::size_t k = 0; k < ms.size(); ++k) {
    const Measurement& m = ms.at(k);
    const auto i = static_cast<Eigen::Index>(k);
    ScoreRow row;
    row.index = k;
    row.id = measurement_label(net, m);
    row.kind = std::string(kind_name(m.kind));
    row.location = std::to_string(net.external_id(m.location.bus));
    if (m.location.is_branch()) row.location += "-" + std::to_string(net.external_id(m.location.to_bus));
    row.raw_djdz = raw_s(i);
    row.raw_colnorm = raw_l(i);
    row.s_score = s(i);
    row.l_score = l(i);
    row.v_score = v(i);
    out.table.rows.push_back(row);
  }
  const Ranking ranking = rank_measurements(out.table, 0.0);
  for (std::size_t pos = 0; pos < ranking.order.size(); ++pos) {
    out.table.rows[ranking.order[pos]].rank = static_cast<int>(pos + 1);
  }
  return out;
}

}  // namespace sevuln
