#include "survope/synthenv.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace survope {
namespace {

// Stream ids under the environment seed.
constexpr std::uint64_t kStreamThetaPi = 1001;
constexpr std::uint64_t kStreamThetaL = 1002;
constexpr std::uint64_t kStreamThetaC = 1003;
constexpr std::uint64_t kStreamStandardize = 1004;
constexpr std::uint64_t kStreamCalibrate = 1005;
// Stream ids under a dataset / evaluation seed.
constexpr std::uint64_t kStreamContexts = 0;
constexpr std::uint64_t kStreamSurvival = 1;
constexpr std::uint64_t kStreamCensoring = 2;
constexpr std::uint64_t kStreamTestContexts = 10;

constexpr double kCalibrationLo = -20.0;
constexpr double kCalibrationHi = 20.0;
constexpr int kCalibrationIters = 60;
constexpr double kCalibrationTolerance = 0.01;

std::vector<double> uniform_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// theta^T phi(x, a) without materializing phi.
double dot_feature(const std::vector<double>& theta, std::span<const double> x, std::size_t a,
                   std::size_t d, std::size_t K) {
  double s = theta[d + a];
  const double* block = theta.data() + d + K + a * d;
  for (std::size_t j = 0; j < d; ++j) s += x[j] * (theta[j] + block[j]);
  return s;
}

double survival_at(double mu, double sigma, double t) {
  if (t <= 0.0) return 1.0;
  return 0.5 * std::erfc((std::log(t) - mu) / (sigma * std::numbers::sqrt2));
}

void check_action(const EnvParams& env, std::size_t action) {
  if (action >= env.num_actions) throw Error("environment: action out of range");
}

}  // namespace

void to_json(nlohmann::json& j, const EnvParams& e) {
  j = nlohmann::json{{"seed", e.seed},
                     {"d", e.dim},
                     {"K", e.num_actions},
                     {"beta", e.beta},
                     {"theta_pi", e.theta_pi},
                     {"theta_L", e.theta_L},
                     {"theta_C", e.theta_C},
                     {"sigma_L", e.sigma_L},
                     {"rho0", e.rho0},
                     {"delta_C", e.delta_C},
                     {"mu_mean", e.mu_mean},
                     {"mu_std", e.mu_std},
                     {"tau", e.tau},
                     {"target_censoring_rate", e.target_censoring_rate},
                     {"calibrated_censoring_rate", e.calibrated_censoring_rate},
                     {"base_costs", e.base_costs}};
}

void from_json(const nlohmann::json& j, EnvParams& e) {
  j.at("seed").get_to(e.seed);
  j.at("d").get_to(e.dim);
  j.at("K").get_to(e.num_actions);
  j.at("beta").get_to(e.beta);
  j.at("theta_pi").get_to(e.theta_pi);
  j.at("theta_L").get_to(e.theta_L);
  j.at("theta_C").get_to(e.theta_C);
  j.at("sigma_L").get_to(e.sigma_L);
  j.at("rho0").get_to(e.rho0);
  j.at("delta_C").get_to(e.delta_C);
  j.at("mu_mean").get_to(e.mu_mean);
  j.at("mu_std").get_to(e.mu_std);
  j.at("tau").get_to(e.tau);
  j.at("target_censoring_rate").get_to(e.target_censoring_rate);
  j.at("calibrated_censoring_rate").get_to(e.calibrated_censoring_rate);
  j.at("base_costs").get_to(e.base_costs);
  if (e.theta_pi.size() != e.dim * e.num_actions || e.theta_L.size() != e.feature_dim() ||
      e.theta_C.size() != e.feature_dim() || !(e.mu_std > 0.0)) {
    throw Error("environment JSON: inconsistent dimensions");
  }
}

std::vector<double> feature_map(std::span<const double> x, std::size_t action, std::size_t d,
                                std::size_t K) {
  if (x.size() != d) throw Error("feature_map: context dimension mismatch");
  if (action >= K) throw Error("feature_map: action out of range");
  std::vector<double> phi(d + K + d * K, 0.0);
  std::copy(x.begin(), x.end(), phi.begin());
  phi[d + action] = 1.0;
  std::copy(x.begin(), x.end(), phi.begin() + static_cast<std::ptrdiff_t>(d + K + action * d));
  return phi;
}

double raw_survival_location(const EnvParams& env, std::span<const double> x, std::size_t a) {
  const std::size_t d = env.dim;
  const double linear = 0.1 * dot_feature(env.theta_L, x, a, d, env.num_actions);
  const std::size_t j = a % d;
  const std::size_t k = (a + 1) % d;
  const std::size_t m = (a + 2) % d;
  const double sign = (a % 2 == 0) ? 1.0 : -1.0;
  return linear + 5.0 * sign * (x[j] * x[k] + x[m] * x[m]);
}

double survival_location(const EnvParams& env, std::span<const double> x, std::size_t a) {
  return (raw_survival_location(env, x, a) - env.mu_mean) / env.mu_std + 0.5;
}

double censoring_scale(const EnvParams& env, std::span<const double> x, std::size_t a) {
  const double mu = survival_location(env, x, a);
  return std::exp(dot_feature(env.theta_C, x, a, env.dim, env.num_actions) + env.rho0 * mu +
                  env.delta_C);
}

std::shared_ptr<SoftmaxLinearPolicy> logging_policy(const EnvParams& env) {
  return std::make_shared<SoftmaxLinearPolicy>(env.dim, env.num_actions, env.theta_pi,
                                               std::vector<double>(env.num_actions, 0.0), env.beta);
}

std::vector<double> sample_context(const EnvParams& env, Rng& rng) {
  std::vector<double> x(env.dim);
  for (auto& v : x) v = rng.normal();
  return x;
}

EnvParams make_env(std::uint64_t seed, const EnvConfig& config) {
  if (!(config.target_censoring_rate > 0.0 && config.target_censoring_rate < 1.0)) {
    throw ConfigError("make_env: target_censoring_rate must lie in (0, 1)");
  }
  if (config.dim == 0 || config.num_actions < 2) throw ConfigError("make_env: need d >= 1 and K >= 2");
  if (!(config.sigma_L > 0.0)) throw ConfigError("make_env: sigma_L must be positive");
  if (!(config.tau > 0.0)) throw ConfigError("make_env: tau must be positive");
  if (config.reference_size < 100) throw ConfigError("make_env: reference sample too small");
  if (!config.base_costs.empty() && config.base_costs.size() != config.num_actions) {
    throw ConfigError("make_env: base_costs must have K entries");
  }

  EnvParams env;
  env.seed = seed;
  env.dim = config.dim;
  env.num_actions = config.num_actions;
  env.beta = config.beta;
  env.sigma_L = config.sigma_L;
  env.rho0 = config.rho0;
  env.tau = config.tau;
  env.target_censoring_rate = config.target_censoring_rate;
  if (config.base_costs.empty()) {
    env.base_costs.resize(env.num_actions);
    for (std::size_t a = 0; a < env.num_actions; ++a) env.base_costs[a] = 0.5 * static_cast<double>(a);
  } else {
    env.base_costs = config.base_costs;
  }
  {
    auto rng = seeded_rng(seed, kStreamThetaPi);
    env.theta_pi = uniform_vector(rng, env.dim * env.num_actions);
  }
  {
    auto rng = seeded_rng(seed, kStreamThetaL);
    env.theta_L = uniform_vector(rng, env.feature_dim());
  }
  {
    auto rng = seeded_rng(seed, kStreamThetaC);
    env.theta_C = uniform_vector(rng, env.feature_dim());
  }

  const auto pi0 = logging_policy(env);
  std::vector<double> probs(env.num_actions);
  const std::size_t n_ref = config.reference_size;

  // Population moments of mu~_L under x ~ N(0, I), a ~ pi0.
  {
    auto rng = seeded_rng(seed, kStreamStandardize);
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < n_ref; ++i) {
      const auto x = sample_context(env, rng);
      pi0->probs_into(x, probs);
      const auto a = rng.categorical(probs);
      const double v = raw_survival_location(env, x, a);
      const double delta = v - mean;
      mean += delta / static_cast<double>(i + 1);
      m2 += delta * (v - mean);
    }
    env.mu_mean = mean;
    env.mu_std = std::sqrt(m2 / static_cast<double>(n_ref));
    if (!(env.mu_std > 0.0)) throw Error("make_env: degenerate survival location (zero spread)");
  }

  // With common random numbers, record i is censored iff delta_C < q_i, so the
  // censoring fraction is a monotone non-increasing step function of delta_C.
  std::vector<double> thresholds(n_ref);
  {
    auto rng = seeded_rng(seed, kStreamCalibrate);
    for (std::size_t i = 0; i < n_ref; ++i) {
      const auto x = sample_context(env, rng);
      pi0->probs_into(x, probs);
      const auto a = rng.categorical(probs);
      const double z = rng.normal();
      const double e = rng.exponential();
      const double mu = survival_location(env, x, a);
      const double log_l = mu + env.sigma_L * z;
      const double log_scale_wo_delta =
          dot_feature(env.theta_C, x, a, env.dim, env.num_actions) + env.rho0 * mu;
      thresholds[i] = log_l - log_scale_wo_delta - std::log(e);
    }
  }
  const auto rate_at = [&](double delta) {
    std::size_t censored = 0;
    for (double q : thresholds) censored += (q > delta) ? 1 : 0;
    return static_cast<double>(censored) / static_cast<double>(n_ref);
  };

  const double target = config.target_censoring_rate;
  const double rate_lo = rate_at(kCalibrationLo);
  const double rate_hi = rate_at(kCalibrationHi);
  if (rate_lo < target - kCalibrationTolerance || rate_hi > target + kCalibrationTolerance) {
    throw Error("make_env: cannot bracket censoring rate " + std::to_string(target) +
                "; achievable range is [" + std::to_string(rate_hi) + ", " +
                std::to_string(rate_lo) + "]");
  }
  double lo = kCalibrationLo;
  double hi = kCalibrationHi;
  double delta = 0.5 * (lo + hi);
  double rate = rate_at(delta);
  for (int it = 0; it < kCalibrationIters; ++it) {
    delta = 0.5 * (lo + hi);
    rate = rate_at(delta);
    if (std::abs(rate - target) < 1e-4) break;
    if (rate > target) {
      lo = delta;
    } else {
      hi = delta;
    }
  }
  if (std::abs(rate - target) > kCalibrationTolerance) {
    throw Error("make_env: calibration reached censoring rate " + std::to_string(rate) +
                " for target " + std::to_string(target));
  }
  env.delta_C = delta;
  env.calibrated_censoring_rate = rate;
  return env;
}

GeneratedData generate_dataset(const EnvParams& env, std::size_t n, std::uint64_t seed,
                               bool with_latents, std::optional<std::vector<double>> cost_spec) {
  if (n == 0) throw Error("generate_dataset: n must be at least 1");
  if (cost_spec && cost_spec->size() != env.num_actions) {
    throw Error("generate_dataset: cost vector must have K entries");
  }
  auto ctx_rng = seeded_rng(seed, kStreamContexts);
  auto surv_rng = seeded_rng(seed, kStreamSurvival);
  auto cens_rng = seeded_rng(seed, kStreamCensoring);
  const auto pi0 = logging_policy(env);
  std::vector<double> probs(env.num_actions);

  GeneratedData out{Dataset(env.dim, env.num_actions), {}};
  out.dataset.reserve(n);
  if (with_latents) out.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LoggedRecord rec;
    rec.context = sample_context(env, ctx_rng);
    pi0->probs_into(rec.context, probs);
    rec.action = ctx_rng.categorical(probs);
    const double mu = survival_location(env, rec.context, rec.action);
    const double latent_l = std::exp(mu + env.sigma_L * surv_rng.normal());
    const double latent_c = censoring_scale(env, rec.context, rec.action) * cens_rng.exponential();
    rec.observed_time = std::min(latent_l, latent_c);
    rec.event = latent_l <= latent_c;
    if (cost_spec) rec.cost = rec.event ? (*cost_spec)[rec.action] : 0.0;
    if (with_latents) out.samples.push_back({rec, latent_l, latent_c});
    out.dataset.push_back(std::move(rec));
  }
  return out;
}

double true_survival(const EnvParams& env, std::span<const double> x, std::size_t a, double t) {
  check_action(env, a);
  if (t < 0.0) throw Error("true_survival: t must be nonnegative");
  return survival_at(survival_location(env, x, a), env.sigma_L, t);
}

double true_censoring_survival(const EnvParams& env, std::span<const double> x, std::size_t a,
                               double t) {
  check_action(env, a);
  if (t < 0.0) throw Error("true_censoring_survival: t must be nonnegative");
  if (t == 0.0) return 1.0;
  return std::exp(-t / censoring_scale(env, x, a));
}

double true_rmst(const EnvParams& env, std::span<const double> x, std::size_t a,
                 const TimeGrid& grid) {
  check_action(env, a);
  const double mu = survival_location(env, x, a);
  std::vector<double> s(grid.num_points() + 1);
  for (std::size_t j = 0; j <= grid.num_points(); ++j) s[j] = survival_at(mu, env.sigma_L, grid.point(j));
  return grid.integrate(s);
}

double true_event_probability(const EnvParams& env, std::span<const double> x, std::size_t a) {
  check_action(env, a);
  // P(L <= C) = E_z[exp(-exp(mu + sigma z) / lambda0)], Simpson on z in [-8, 8].
  const double mu = survival_location(env, x, a);
  const double inv_scale = 1.0 / censoring_scale(env, x, a);
  constexpr int kIntervals = 256;
  constexpr double kLo = -8.0;
  constexpr double kHi = 8.0;
  const double h = (kHi - kLo) / kIntervals;
  double acc = 0.0;
  for (int k = 0; k <= kIntervals; ++k) {
    const double z = kLo + h * k;
    const double density = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    const double f = density * std::exp(-std::exp(mu + env.sigma_L * z) * inv_scale);
    const double weight = (k == 0 || k == kIntervals) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    acc += weight * f;
  }
  return std::clamp(acc * h / 3.0, 0.0, 1.0);
}

std::size_t oracle_best_action(const EnvParams& env, std::span<const double> x) {
  std::vector<double> mu(env.num_actions);
  for (std::size_t a = 0; a < env.num_actions; ++a) mu[a] = raw_survival_location(env, x, a);
  return argmax_lowest(mu);
}

namespace {

MonteCarloValue summarize(double sum, double sum_sq, std::size_t n) {
  const double nd = static_cast<double>(n);
  const double mean = sum / nd;
  const double var = n > 1 ? std::max(0.0, (sum_sq - nd * mean * mean) / (nd - 1.0)) : 0.0;
  return {mean, std::sqrt(var / nd)};
}

}  // namespace

std::vector<MonteCarloValue> true_policy_values(const EnvParams& env,
                                                std::span<const Policy* const> policies,
                                                const TimeGrid& grid, std::size_t n_test,
                                                std::uint64_t seed) {
  if (n_test == 0) throw Error("true_policy_value: n_test must be at least 1");
  auto rng = seeded_rng(seed, kStreamTestContexts);
  const auto times = grid.points_with_origin();
  const auto weights = grid.trapezoid_weights();
  std::vector<double> log_t(times.size(), 0.0);
  for (std::size_t j = 1; j < times.size(); ++j) log_t[j] = std::log(times[j]);
  const double scale = 1.0 / (env.sigma_L * std::numbers::sqrt2);

  std::vector<double> rmst(env.num_actions);
  std::vector<double> probs(env.num_actions);
  std::vector<double> sum(policies.size(), 0.0);
  std::vector<double> sum_sq(policies.size(), 0.0);
  for (std::size_t i = 0; i < n_test; ++i) {
    const auto x = sample_context(env, rng);
    for (std::size_t a = 0; a < env.num_actions; ++a) {
      const double mu = survival_location(env, x, a);
      double acc = weights[0];
      for (std::size_t j = 1; j < times.size(); ++j) acc += weights[j] * 0.5 * std::erfc((log_t[j] - mu) * scale);
      rmst[a] = acc;
    }
    for (std::size_t p = 0; p < policies.size(); ++p) {
      policies[p]->probs_into(x, probs);
      double v = 0.0;
      for (std::size_t a = 0; a < env.num_actions; ++a) v += probs[a] * rmst[a];
      sum[p] += v;
      sum_sq[p] += v * v;
    }
  }
  std::vector<MonteCarloValue> out;
  for (std::size_t p = 0; p < policies.size(); ++p) out.push_back(summarize(sum[p], sum_sq[p], n_test));
  return out;
}

MonteCarloValue true_policy_value(const EnvParams& env, const Policy& policy, const TimeGrid& grid,
                                  std::size_t n_test, std::uint64_t seed) {
  const Policy* ptr = &policy;
  return true_policy_values(env, std::span<const Policy* const>(&ptr, 1), grid, n_test, seed).front();
}

MonteCarloValue true_point_value(const EnvParams& env, const Policy& policy, double t,
                                 std::size_t n_test, std::uint64_t seed) {
  if (n_test == 0) throw Error("true_point_value: n_test must be at least 1");
  auto rng = seeded_rng(seed, kStreamTestContexts);
  std::vector<double> probs(env.num_actions);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n_test; ++i) {
    const auto x = sample_context(env, rng);
    policy.probs_into(x, probs);
    double v = 0.0;
    for (std::size_t a = 0; a < env.num_actions; ++a) {
      if (probs[a] > 0.0) v += probs[a] * survival_at(survival_location(env, x, a), env.sigma_L, t);
    }
    sum += v;
    sum_sq += v * v;
  }
  return summarize(sum, sum_sq, n_test);
}

MonteCarloValue true_policy_cost(const EnvParams& env, const Policy& policy, std::size_t n_test,
                                 std::uint64_t seed) {
  if (n_test == 0) throw Error("true_policy_cost: n_test must be at least 1");
  auto rng = seeded_rng(seed, kStreamTestContexts);
  std::vector<double> probs(env.num_actions);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n_test; ++i) {
    const auto x = sample_context(env, rng);
    policy.probs_into(x, probs);
    double v = 0.0;
    for (std::size_t a = 0; a < env.num_actions; ++a) {
      if (probs[a] > 0.0 && env.base_costs[a] != 0.0) {
        v += probs[a] * env.base_costs[a] * true_event_probability(env, x, a);
      }
    }
    sum += v;
    sum_sq += v * v;
  }
  return summarize(sum, sum_sq, n_test);
}

std::shared_ptr<EpsilonGreedyPolicy> make_eval_policy(const EnvParams& env, double epsilon) {
  auto shared = std::make_shared<const EnvParams>(env);
  return std::make_shared<EpsilonGreedyPolicy>(
      env.num_actions, epsilon,
      [shared](std::span<const double> x) { return oracle_best_action(*shared, x); });
}

double censoring_fraction(const EnvParams& env, std::size_t n, std::uint64_t seed) {
  const auto data = generate_dataset(env, n, seed);
  std::size_t censored = 0;
  for (const auto& r : data.dataset) censored += r.event ? 0 : 1;
  return static_cast<double>(censored) / static_cast<double>(n);
}

double TrueSurvivalModel::survival(std::span<const double> x, std::size_t a, double t) const {
  return true_survival(*env_, x, a, t);
}

void TrueSurvivalModel::curve(std::span<const double> x, std::size_t a,
                              std::span<const double> times, std::span<double> out) const {
  check_action(*env_, a);
  const double mu = survival_location(*env_, x, a);
  for (std::size_t j = 0; j < times.size(); ++j) out[j] = survival_at(mu, env_->sigma_L, times[j]);
}

double TrueCensoringModel::survival(std::span<const double> x, std::size_t a, double t) const {
  return true_censoring_survival(*env_, x, a, t);
}

void TrueCensoringModel::curve(std::span<const double> x, std::size_t a,
                               std::span<const double> times, std::span<double> out) const {
  check_action(*env_, a);
  const double inv_scale = 1.0 / censoring_scale(*env_, x, a);
  for (std::size_t j = 0; j < times.size(); ++j) out[j] = times[j] <= 0.0 ? 1.0 : std::exp(-times[j] * inv_scale);
}

}  // namespace survope
