#include "survope/cox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

namespace survope {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double CoxStratum::baseline_cumulative_hazard(double t) const {
  const auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
  if (it == event_times.begin()) return 0.0;
  return cumulative_hazard[static_cast<std::size_t>(it - event_times.begin()) - 1];
}

CoxModel::CoxModel(std::size_t dim, SurvivalTarget target, double l2, std::vector<CoxStratum> strata)
    : dim_(dim), target_(target), l2_(l2), strata_(std::move(strata)) {}

const CoxStratum& CoxModel::stratum(std::size_t action) const {
  if (action >= strata_.size()) {
    throw Error("cox model: unknown action " + std::to_string(action) + " (model has " +
                std::to_string(strata_.size()) + " strata)");
  }
  return strata_[action];
}

std::vector<std::string> CoxModel::warnings() const {
  std::vector<std::string> out;
  for (std::size_t a = 0; a < strata_.size(); ++a) {
    if (strata_[a].degenerate) {
      out.push_back("cox(" + to_string(target_) + "): action " + std::to_string(a) +
                    " has no target events; survival fixed at 1");
    } else if (!strata_[a].converged) {
      out.push_back("cox(" + to_string(target_) + "): action " + std::to_string(a) +
                    " did not converge");
    }
  }
  return out;
}

namespace {

double linear_predictor(const CoxStratum& s, std::span<const double> x) {
  double eta = 0.0;
  for (std::size_t j = 0; j < s.coefficients.size(); ++j) eta += s.coefficients[j] * x[j];
  return eta;
}

bool is_target(const LoggedRecord& r, SurvivalTarget target) {
  return target == SurvivalTarget::kEvent ? r.event : !r.event;
}

// Records of one stratum, sorted by descending time.
struct StratumData {
  MatrixXd X;  // m x d
  std::vector<double> time;
  std::vector<char> status;
  std::size_t num_events = 0;
};

StratumData collect(const Dataset& dataset, std::size_t action, SurvivalTarget target) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].action == action) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return dataset[a].observed_time > dataset[b].observed_time;
  });
  StratumData s;
  const auto d = static_cast<Eigen::Index>(dataset.dim());
  s.X.resize(static_cast<Eigen::Index>(idx.size()), d);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& r = dataset[idx[k]];
    for (Eigen::Index j = 0; j < d; ++j) s.X(static_cast<Eigen::Index>(k), j) = r.context[static_cast<std::size_t>(j)];
    s.time.push_back(r.observed_time);
    const bool ev = is_target(r, target);
    s.status.push_back(ev ? 1 : 0);
    s.num_events += ev ? 1 : 0;
  }
  return s;
}

// Mean Breslow log partial likelihood minus ridge; optional derivatives.
double objective(const StratumData& s, const VectorXd& beta, double l2, VectorXd* grad,
                 MatrixXd* hess) {
  const Eigen::Index m = s.X.rows();
  const Eigen::Index d = s.X.cols();
  const VectorXd eta = s.X * beta;
  const double shift = m > 0 ? eta.maxCoeff() : 0.0;
  double s0 = 0.0;
  VectorXd s1 = VectorXd::Zero(d);
  MatrixXd s2 = MatrixXd::Zero(d, d);
  double loglik = 0.0;
  VectorXd g = VectorXd::Zero(d);
  MatrixXd h = MatrixXd::Zero(d, d);
  const bool need_derivs = grad != nullptr;

  Eigen::Index k = 0;
  while (k < m) {
    // Add the whole tie group to the risk set before scoring its events.
    Eigen::Index end = k;
    while (end < m && s.time[static_cast<std::size_t>(end)] == s.time[static_cast<std::size_t>(k)]) {
      const double w = std::exp(eta(end) - shift);
      s0 += w;
      if (need_derivs) {
        s1.noalias() += w * s.X.row(end).transpose();
        if (hess) s2.noalias() += w * s.X.row(end).transpose() * s.X.row(end);
      }
      ++end;
    }
    for (Eigen::Index i = k; i < end; ++i) {
      if (!s.status[static_cast<std::size_t>(i)]) continue;
      loglik += eta(i) - shift - std::log(s0);
      if (need_derivs) {
        const VectorXd mean = s1 / s0;
        g.noalias() += s.X.row(i).transpose() - mean;
        if (hess) h.noalias() -= s2 / s0 - mean * mean.transpose();
      }
    }
    k = end;
  }
  const double n = static_cast<double>(std::max<Eigen::Index>(m, 1));
  const double value = loglik / n - 0.5 * l2 * beta.squaredNorm();
  if (grad) *grad = g / n - l2 * beta;
  if (hess) *hess = h / n - l2 * MatrixXd::Identity(d, d);
  return value;
}

CoxStratum fit_stratum(const StratumData& s, std::size_t d, const CoxFitOptions& opt) {
  CoxStratum out;
  out.num_records = static_cast<std::size_t>(s.X.rows());
  out.num_target_events = s.num_events;
  out.coefficients.assign(d, 0.0);
  if (s.num_events == 0) {
    out.degenerate = true;
    out.converged = true;
    return out;
  }

  VectorXd beta = VectorXd::Zero(static_cast<Eigen::Index>(d));
  VectorXd grad;
  MatrixXd hess;
  double value = objective(s, beta, opt.l2, &grad, &hess);
  if (!std::isfinite(value)) throw Error("fit_cox: non-finite partial likelihood at start");
  out.objective_trace.push_back(value);
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    if (grad.lpNorm<Eigen::Infinity>() < 1e-9) {
      out.converged = true;
      break;
    }
    const VectorXd direction = (-hess).ldlt().solve(grad);
    double step = 1.0;
    VectorXd candidate;
    double cand_value = value;
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving) {
      candidate = beta + step * direction;
      cand_value = objective(s, candidate, opt.l2, nullptr, nullptr);
      if (std::isfinite(cand_value) && cand_value >= value) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    out.iterations = it + 1;
    if (!improved) {
      out.converged = true;  // stationary to machine precision
      break;
    }
    const double gain = cand_value - value;
    beta = candidate;
    value = objective(s, beta, opt.l2, &grad, &hess);
    if (!std::isfinite(value)) throw Error("fit_cox: non-finite partial likelihood");
    out.objective_trace.push_back(value);
    if (gain < opt.tol) {
      out.converged = true;
      break;
    }
  }
  for (std::size_t j = 0; j < d; ++j) out.coefficients[j] = beta(static_cast<Eigen::Index>(j));

  // Breslow baseline: walk times ascending (data is sorted descending).
  const VectorXd risk = (s.X * beta).array().exp().matrix();
  std::vector<double> cum(static_cast<std::size_t>(s.X.rows()), 0.0);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < s.X.rows(); ++k) {
    acc += risk(k);
    cum[static_cast<std::size_t>(k)] = acc;
  }
  std::vector<std::pair<double, double>> jumps;  // (time, d_j / risk set)
  Eigen::Index k = 0;
  const Eigen::Index m = s.X.rows();
  while (k < m) {
    Eigen::Index end = k;
    std::size_t events = 0;
    while (end < m && s.time[static_cast<std::size_t>(end)] == s.time[static_cast<std::size_t>(k)]) {
      events += s.status[static_cast<std::size_t>(end)] ? 1 : 0;
      ++end;
    }
    if (events > 0) {
      jumps.emplace_back(s.time[static_cast<std::size_t>(k)],
                         static_cast<double>(events) / cum[static_cast<std::size_t>(end - 1)]);
    }
    k = end;
  }
  std::reverse(jumps.begin(), jumps.end());
  double h0 = 0.0;
  for (const auto& [t, inc] : jumps) {
    h0 += inc;
    out.event_times.push_back(t);
    out.cumulative_hazard.push_back(h0);
  }
  return out;
}

}  // namespace

CoxModel fit_cox(const Dataset& dataset, SurvivalTarget target, const CoxFitOptions& options) {
  require_nonempty(dataset, "fit_cox");
  if (options.l2 < 0.0) throw Error("fit_cox: l2 must be nonnegative");
  std::vector<CoxStratum> strata;
  strata.reserve(dataset.num_actions());
  for (std::size_t a = 0; a < dataset.num_actions(); ++a) {
    strata.push_back(fit_stratum(collect(dataset, a, target), dataset.dim(), options));
  }
  return CoxModel(dataset.dim(), target, options.l2, std::move(strata));
}

double cox_penalized_objective(const Dataset& dataset, std::size_t action, SurvivalTarget target,
                               std::span<const double> coefficients, double l2) {
  const auto s = collect(dataset, action, target);
  VectorXd beta(static_cast<Eigen::Index>(coefficients.size()));
  for (std::size_t j = 0; j < coefficients.size(); ++j) beta(static_cast<Eigen::Index>(j)) = coefficients[j];
  return objective(s, beta, l2, nullptr, nullptr);
}

double CoxModel::survival(std::span<const double> x, std::size_t action, double t) const {
  const auto& s = stratum(action);
  if (s.degenerate || t <= 0.0) return 1.0;
  return std::exp(-s.baseline_cumulative_hazard(t) * std::exp(linear_predictor(s, x)));
}

void CoxModel::curve(std::span<const double> x, std::size_t action, std::span<const double> times,
                     std::span<double> out) const {
  const auto& s = stratum(action);
  if (s.degenerate) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(times.size()), 1.0);
    return;
  }
  const double risk = std::exp(linear_predictor(s, x));
  for (std::size_t j = 0; j < times.size(); ++j) {
    out[j] = times[j] <= 0.0 ? 1.0 : std::exp(-s.baseline_cumulative_hazard(times[j]) * risk);
  }
}

double predict_survival(const CoxModel& model, std::span<const double> x, std::size_t action,
                        double t) {
  if (x.size() != model.dim()) throw Error("predict_survival: context dimension mismatch");
  return model.survival(x, action, t);
}

std::string to_string(SurvivalTarget target) {
  return target == SurvivalTarget::kEvent ? "event" : "censoring";
}

SurvivalTarget survival_target_from_string(const std::string& name) {
  if (name == "event") return SurvivalTarget::kEvent;
  if (name == "censoring") return SurvivalTarget::kCensoring;
  throw Error("unknown survival target '" + name + "'");
}

void to_json(nlohmann::json& j, const CoxModel& m) {
  nlohmann::json strata = nlohmann::json::array();
  for (const auto& s : m.strata()) {
    strata.push_back({{"coefficients", s.coefficients},
                      {"event_times", s.event_times},
                      {"cumulative_hazard", s.cumulative_hazard},
                      {"num_records", s.num_records},
                      {"num_target_events", s.num_target_events},
                      {"iterations", s.iterations},
                      {"converged", s.converged},
                      {"degenerate", s.degenerate}});
  }
  j = nlohmann::json{{"type", "cox_ph"},
                     {"d", m.dim()},
                     {"target", to_string(m.target())},
                     {"l2", m.l2()},
                     {"strata", std::move(strata)}};
}

void from_json(const nlohmann::json& j, CoxModel& m) {
  const auto d = j.at("d").get<std::size_t>();
  std::vector<CoxStratum> strata;
  for (const auto& js : j.at("strata")) {
    CoxStratum s;
    js.at("coefficients").get_to(s.coefficients);
    js.at("event_times").get_to(s.event_times);
    js.at("cumulative_hazard").get_to(s.cumulative_hazard);
    s.num_records = js.value("num_records", std::size_t{0});
    s.num_target_events = js.value("num_target_events", std::size_t{0});
    s.iterations = js.value("iterations", std::size_t{0});
    s.converged = js.value("converged", true);
    s.degenerate = js.value("degenerate", false);
    if (s.coefficients.size() != d || s.event_times.size() != s.cumulative_hazard.size()) {
      throw Error("cox JSON: inconsistent stratum");
    }
    strata.push_back(std::move(s));
  }
  m = CoxModel(d, survival_target_from_string(j.at("target").get<std::string>()),
               j.value("l2", 0.0), std::move(strata));
}

}  // namespace survope
