#include "survope/estimators.hpp"

#include <cmath>
#include <charconv>
#include <numeric>

namespace survope {

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::kDM: return "dm";
    case Estimator::kIPS: return "ips";
    case Estimator::kDR: return "dr";
    case Estimator::kIpcwIPS: return "ipcw_ips";
    case Estimator::kIpcwDR: return "ipcw_dr";
  }
  return "unknown";
}

Estimator estimator_from_string(const std::string& name) {
  for (auto e : all_estimators()) {
    if (to_string(e) == name) return e;
  }
  throw ConfigError("unknown estimator '" + name + "' (expected dm, ips, dr, ipcw_ips, ipcw_dr)");
}

const std::vector<Estimator>& all_estimators() {
  static const std::vector<Estimator> kAll{Estimator::kDM, Estimator::kIPS, Estimator::kDR,
                                           Estimator::kIpcwIPS, Estimator::kIpcwDR};
  return kAll;
}

namespace {

std::string format_number(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool needs_propensity(Estimator e) { return e != Estimator::kDM; }
bool needs_outcome(Estimator e) {
  return e == Estimator::kDM || e == Estimator::kDR || e == Estimator::kIpcwDR;
}
bool needs_censoring(Estimator e) { return e == Estimator::kIpcwIPS || e == Estimator::kIpcwDR; }

}  // namespace

std::string describe(const Target& target) {
  if (const auto* p = std::get_if<PointTarget>(&target)) return "t=" + format_number(p->t);
  const auto& r = std::get<RmstTarget>(target);
  return "rmst:tau=" + format_number(r.tau) + ":M=" + std::to_string(r.num_points);
}

void to_json(nlohmann::json& j, const EstimateReport& r) {
  j = nlohmann::json{{"estimator", to_string(r.estimator)},
                     {"target", describe(r.target)},
                     {"value", r.value},
                     {"clamp_count", r.clamp_count},
                     {"n", r.per_sample.size()}};
}

std::vector<EstimateReport> estimate_many(const Dataset& dataset, const Policy& eval_policy,
                                          const NuisanceBundle& nuisance, const Target& target,
                                          const std::vector<Estimator>& which) {
  require_nonempty(dataset, "estimate");
  const std::size_t K = dataset.num_actions();
  if (eval_policy.num_actions() != K) throw Error("estimate: evaluation policy has wrong action count");

  bool want_prop = false;
  bool want_out = false;
  bool want_cens = false;
  for (auto e : which) {
    want_prop = want_prop || needs_propensity(e);
    want_out = want_out || needs_outcome(e);
    want_cens = want_cens || needs_censoring(e);
  }
  if (want_prop && !nuisance.propensity) throw Error("estimate: estimator requires a propensity source");
  if (want_out && !nuisance.outcome) throw Error("estimate: estimator requires an outcome model");
  if (want_cens && !nuisance.censoring) throw Error("estimate: estimator requires a censoring model");
  if (want_prop && nuisance.propensity->num_actions() != K) {
    throw Error("estimate: propensity source has wrong action count");
  }

  std::vector<double> times;
  std::vector<double> weights;
  if (const auto* p = std::get_if<PointTarget>(&target)) {
    if (p->t < 0.0) throw Error("estimate: t must be nonnegative");
    times = {p->t};
    weights = {1.0};
  } else {
    const auto& r = std::get<RmstTarget>(target);
    const TimeGrid grid(r.tau, r.num_points);
    times = grid.points_with_origin();
    weights = grid.trapezoid_weights();
  }
  const std::size_t nt = times.size();
  const std::size_t n = dataset.size();

  std::vector<EstimateReport> reports(which.size());
  for (std::size_t e = 0; e < which.size(); ++e) {
    reports[e].estimator = which[e];
    reports[e].target = target;
    reports[e].per_sample.resize(n);
  }
  std::size_t clamps = 0;

  std::vector<double> pe(K);
  std::vector<double> p0(K);
  std::vector<double> s_all(want_out ? K * nt : 0);
  std::vector<double> g(nt, 1.0);
  std::vector<double> dm(nt, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = dataset[i];
    const std::span<const double> x(rec.context);
    eval_policy.probs_into(x, pe);

    double w = 0.0;
    if (want_prop) {
      nuisance.propensity->probs_into(x, p0);
      const double pa = p0[rec.action];
      if (pa > 0.0) {
        w = pe[rec.action] / pa;
      } else if (pe[rec.action] > 0.0) {
        throw Error("estimate: record " + std::to_string(i) + " has zero logging propensity for action " +
                    std::to_string(rec.action) + " while the evaluation policy plays it "
                    "(common support violated)");
      }
    }
    if (want_out) {
      std::fill(dm.begin(), dm.end(), 0.0);
      for (std::size_t a = 0; a < K; ++a) {
        const std::span<double> row(s_all.data() + a * nt, nt);
        nuisance.outcome->curve(x, a, times, row);
        if (pe[a] == 0.0) continue;
        for (std::size_t j = 0; j < nt; ++j) dm[j] += pe[a] * row[j];
      }
    }
    if (want_cens) {
      nuisance.censoring->curve(x, rec.action, times, g);
      for (auto& gj : g) {
        if (gj < nuisance.weight_floor) ++clamps;
        gj = clamp_censoring_weight(gj, nuisance.weight_floor);
      }
    }

    for (std::size_t e = 0; e < which.size(); ++e) {
      double acc = 0.0;
      for (std::size_t j = 0; j < nt; ++j) {
        const double ind = rec.observed_time > times[j] ? 1.0 : 0.0;
        double ipcw = 0.0;
        if (needs_censoring(which[e]) && ind > 0.0) {
          if (g[j] <= 0.0) {
            throw Error("estimate: censoring survival is zero for a record still at risk; "
                        "use a positive weight floor");
          }
          ipcw = ind / g[j];
        }
        const double s_logged = want_out ? s_all[rec.action * nt + j] : 0.0;
        double c = 0.0;
        switch (which[e]) {
          case Estimator::kDM: c = dm[j]; break;
          case Estimator::kIPS: c = w * ind; break;
          case Estimator::kDR: c = w * (ind - s_logged) + dm[j]; break;
          case Estimator::kIpcwIPS: c = w * ipcw; break;
          case Estimator::kIpcwDR: c = w * (ipcw - s_logged) + dm[j]; break;
        }
        acc += weights[j] * c;
      }
      reports[e].per_sample[i] = acc;
    }
  }

  for (auto& r : reports) {
    r.value = std::accumulate(r.per_sample.begin(), r.per_sample.end(), 0.0) / static_cast<double>(n);
    r.clamp_count = needs_censoring(r.estimator) ? clamps : 0;
  }
  return reports;
}

EstimateReport estimate_point(const Dataset& dataset, const Policy& eval_policy,
                              const NuisanceBundle& nuisance, double t, Estimator which) {
  return estimate_many(dataset, eval_policy, nuisance, PointTarget{t}, {which}).front();
}

EstimateReport estimate_dm(const Dataset& dataset, const Policy& eval_policy,
                           const NuisanceBundle& nuisance, double t) {
  return estimate_point(dataset, eval_policy, nuisance, t, Estimator::kDM);
}

EstimateReport estimate_ips_naive(const Dataset& dataset, const Policy& eval_policy,
                                  const NuisanceBundle& nuisance, double t) {
  return estimate_point(dataset, eval_policy, nuisance, t, Estimator::kIPS);
}

EstimateReport estimate_dr_naive(const Dataset& dataset, const Policy& eval_policy,
                                 const NuisanceBundle& nuisance, double t) {
  return estimate_point(dataset, eval_policy, nuisance, t, Estimator::kDR);
}

EstimateReport estimate_ipcw_ips(const Dataset& dataset, const Policy& eval_policy,
                                 const NuisanceBundle& nuisance, double t) {
  return estimate_point(dataset, eval_policy, nuisance, t, Estimator::kIpcwIPS);
}

EstimateReport estimate_ipcw_dr(const Dataset& dataset, const Policy& eval_policy,
                                const NuisanceBundle& nuisance, double t) {
  return estimate_point(dataset, eval_policy, nuisance, t, Estimator::kIpcwDR);
}

EstimateReport estimate_rmst(const Dataset& dataset, const Policy& eval_policy,
                             const NuisanceBundle& nuisance, const TimeGrid& grid,
                             Estimator which) {
  return estimate_many(dataset, eval_policy, nuisance, RmstTarget{grid.tau(), grid.num_points()},
                       {which})
      .front();
}

MonteCarloValue naive_bias_oracle(const EnvParams& env, const Policy& eval_policy, double t,
                                  std::size_t n_mc, std::uint64_t seed) {
  if (n_mc == 0) throw Error("naive_bias_oracle: n_mc must be at least 1");
  auto rng = seeded_rng(seed, 10);
  std::vector<double> pe(env.num_actions);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const auto x = sample_context(env, rng);
    eval_policy.probs_into(x, pe);
    double v = 0.0;
    for (std::size_t a = 0; a < env.num_actions; ++a) {
      if (pe[a] == 0.0) continue;
      v += pe[a] * true_survival(env, x, a, t) * (true_censoring_survival(env, x, a, t) - 1.0);
    }
    sum += v;
    sum_sq += v * v;
  }
  const double nd = static_cast<double>(n_mc);
  const double mean = sum / nd;
  const double var = n_mc > 1 ? std::max(0.0, (sum_sq - nd * mean * mean) / (nd - 1.0)) : 0.0;
  return {mean, std::sqrt(var / nd)};
}

TrialMetrics aggregate_trials(const std::vector<double>& estimates, double truth,
                              std::string estimator) {
  if (estimates.size() < 2) throw Error("aggregate_trials: need at least two estimates");
  const double n = static_cast<double>(estimates.size());
  const double mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / n;
  double variance = 0.0;
  double mse = 0.0;
  for (double v : estimates) {
    variance += (v - mean) * (v - mean);
    mse += (v - truth) * (v - truth);
  }
  TrialMetrics m;
  m.estimator = std::move(estimator);
  m.n_trials = estimates.size();
  m.mean = mean;
  m.variance = variance / n;
  m.mse = mse / n;
  m.squared_bias = (mean - truth) * (mean - truth);
  return m;
}

std::string estimate_csv_header() { return "estimator,target,value,clamp_count"; }

std::string estimate_csv_row(const EstimateReport& r) {
  return to_string(r.estimator) + "," + describe(r.target) + "," + format_number(r.value) + "," +
         std::to_string(r.clamp_count);
}

std::string trial_metrics_csv_header() {
  return "estimator,n,rho1,epsilon,beta,mse,squared_bias,variance";
}

std::string trial_metrics_csv_row(const TrialMetrics& m, const TrialFactors& f) {
  return m.estimator + "," + std::to_string(f.n) + "," + format_number(f.rho1) + "," +
         format_number(f.epsilon) + "," + format_number(f.beta) + "," + format_number(m.mse) + "," +
         format_number(m.squared_bias) + "," + format_number(m.variance);
}

}  // namespace survope
