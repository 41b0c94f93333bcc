#include "sevuln/robustness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace sevuln {

std::vector<double> default_scale_factors() {
  std::vector<double> f(24);
  for (int k = 0; k < 24; ++k) f[static_cast<std::size_t>(k)] = 0.55 + 0.6 * k / 23.0;
  return f;
}

std::pair<std::size_t, std::size_t> SensitivityEnsemble::column_index(std::size_t flat) const {
  if (n == 0 || flat >= n * p) throw ShapeError("flat column index out of range");
  return {flat % n, flat / n};
}

namespace {

ConditionSensitivities evaluate_condition(const Network& base, const MeasurementConfig& cfg,
                                          double factor, std::uint64_t seed,
                                          const SweepOptions& opts) {
  const Network net = scale_demands(base, factor);
  const bool consistent = opts.input == StealthInput::kSurrogate;
  const MeasurementSet ms =
      synthesize_measurements(net, cfg, consistent ? 0.0 : opts.noise_scale, seed);
  const EstimationProblem problem(net, ms);
  const EstimationResult est = estimate_state(problem, opts.solver);
  const AssessmentResult a = run_algorithm_1(problem, est, opts.score, opts.input);

  ConditionSensitivities out;
  out.dx_dz = a.sensitivities.dx_dz;
  out.j_star = est.j_star;
  out.table = a.table;
  if (consistent) {
    const auto& var = problem.layout().measured_var;
    out.dj_dz.resize(static_cast<Eigen::Index>(ms.size()));
    for (std::size_t l = 0; l < ms.size(); ++l) {
      const auto col = static_cast<Eigen::Index>(l);
      out.dj_dz(col) = 2.0 * ms.at(l).weight * (1.0 - out.dx_dz(var[l], col));
    }
  } else {
    out.dj_dz = a.sensitivities.dj_dz;
  }
  return out;
}

}  // namespace

SensitivityEnsemble sweep_operating_conditions(const Network& net, const MeasurementConfig& cfg,
                                               const std::vector<double>& factors,
                                               const SweepOptions& opts) {
  if (factors.empty()) throw ValidationError("no operating conditions requested");
  cfg.validate(net);

  SensitivityEnsemble ens;
  ens.conditions.resize(factors.size());
  for (std::size_t k = 0; k < factors.size(); ++k) {
    ens.conditions[k].factor = factors[k];
    ens.conditions[k].seed =
        opts.seed_policy == SeedPolicy::kCommon ? opts.base_seed : opts.base_seed + k;
  }

  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    for (std::size_t k = next++; k < factors.size(); k = next++) {
      ConditionOutcome& c = ens.conditions[k];
      try {
        if (opts.cache_get) {
          if (auto hit = opts.cache_get(c.factor, c.seed)) {
            c.result = std::move(*hit);
            c.ok = true;
            c.from_cache = true;
            continue;
          }
        }
        c.result = evaluate_condition(net, cfg, c.factor, c.seed, opts);
        c.ok = true;
      } catch (const Error& e) {
        c.error = e.what();
        c.error_class = e.error_class();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(factors.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Reduction in factor order, single-threaded.
  std::vector<const ConditionOutcome*> good;
  for (auto& c : ens.conditions) {
    if (c.ok && opts.cache_put && !c.from_cache) opts.cache_put(c.factor, c.seed, c.result);
    if (c.ok) good.push_back(&c);
  }
  const std::size_t needed = std::min<std::size_t>(2, factors.size());
  if (good.size() < needed) {
    const ConditionOutcome* first = nullptr;
    for (const auto& c : ens.conditions) {
      if (!c.ok) {
        first = &c;
        break;
      }
    }
    throw Error(first ? first->error_class : ErrorClass::kValidation,
                "only " + std::to_string(good.size()) + " of " + std::to_string(factors.size()) +
                    " operating conditions succeeded (first failure: " +
                    (first ? first->error : std::string("none")) + ")");
  }

  ens.n = static_cast<std::size_t>(good.front()->result.dx_dz.rows());
  ens.p = static_cast<std::size_t>(good.front()->result.dx_dz.cols());
  const auto t = static_cast<Eigen::Index>(good.size());
  const auto np = static_cast<Eigen::Index>(ens.n * ens.p);
  ens.x_matrix.resize(t, np);
  ens.j_matrix.resize(t, static_cast<Eigen::Index>(ens.p));
  for (Eigen::Index k = 0; k < t; ++k) {
    const ConditionSensitivities& r = good[static_cast<std::size_t>(k)]->result;
    if (static_cast<std::size_t>(r.dx_dz.rows()) != ens.n ||
        static_cast<std::size_t>(r.dx_dz.cols()) != ens.p) {
      throw ShapeError("operating conditions produced sensitivities of different shapes");
    }
    ens.x_matrix.row(k) = Eigen::Map<const Eigen::RowVectorXd>(r.dx_dz.data(), np);
    ens.j_matrix.row(k) = r.dj_dz.transpose();
    ens.factors.push_back(good[static_cast<std::size_t>(k)]->factor);
  }

  const EstimationProblem shape(net, MeasurementSet(cfg.layout(), cfg.zero_inj_buses));
  ens.variable_names = shape.variable_names();
  for (const Measurement& m : shape.measurements().measurements()) {
    ens.measurement_ids.push_back(measurement_label(net, m));
  }
  return ens;
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> center_columns(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) throw ShapeError("cannot center an empty matrix");
  const Eigen::VectorXd means = m.colwise().mean().transpose();
  Eigen::MatrixXd c = m.rowwise() - means.transpose();
  return {std::move(c), means};
}

Eigen::VectorXd singular_values(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) throw DomainError("matrix has non-finite entries");
  if (m.rows() == 0 || m.cols() == 0) return Eigen::VectorXd();
  // Work on the short side; X is t x (n p) with t small.
  if (m.rows() <= m.cols()) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m.transpose());
    return svd.singularValues();
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues();
}

Eigen::VectorXd cumulative_energy(const Eigen::VectorXd& sigma, bool squared) {
  Eigen::VectorXd e = squared ? Eigen::VectorXd(sigma.array().square()) : sigma;
  const double total = e.sum();
  if (!(total > 0.0)) {
    throw DegenerateError("all singular values are zero; cumulative energy is undefined");
  }
  Eigen::VectorXd ce(e.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    acc += e(i);
    ce(i) = acc / total;
  }
  ce(e.size() - 1) = 1.0;
  return ce;
}

SvdReport svd_analysis(const SensitivityEnsemble& ens, bool squared) {
  SvdReport rep;
  rep.squared = squared;
  auto [xc, xm] = center_columns(ens.x_matrix);
  auto [jc, jm] = center_columns(ens.j_matrix);
  rep.mean_x = std::move(xm);
  rep.mean_j = std::move(jm);
  rep.sigma_x = singular_values(xc);
  rep.sigma_j = singular_values(jc);
  rep.ce_x = cumulative_energy(rep.sigma_x, squared);
  rep.ce_j = cumulative_energy(rep.sigma_j, squared);
  return rep;
}

double ce_at(const Eigen::VectorXd& ce, std::size_t r) {
  if (r == 0) throw DomainError("rank must be at least 1");
  if (ce.size() == 0) return 1.0;
  const auto idx = std::min<Eigen::Index>(static_cast<Eigen::Index>(r), ce.size()) - 1;
  return ce(idx);
}

InvarianceVerdict invariance_verdict(const SvdReport& report, std::size_t r_x, std::size_t r_j,
                                     double threshold) {
  InvarianceVerdict v;
  v.r = r_x;
  v.threshold = threshold;
  v.ce_x = ce_at(report.ce_x, r_x);
  v.ce_j = ce_at(report.ce_j, r_j);
  v.invariant_x = v.ce_x >= threshold;
  v.invariant_j = v.ce_j >= threshold;
  v.invariant = v.invariant_x && v.invariant_j;
  return v;
}

InvarianceVerdict invariance_verdict(const SvdReport& report, std::size_t r, double threshold) {
  return invariance_verdict(report, r, r, threshold);
}

}  // namespace sevuln
