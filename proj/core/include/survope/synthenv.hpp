#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "survope/policy.hpp"
#include "survope/random.hpp"
#include "survope/survival_model.hpp"
#include "survope/types.hpp"

namespace survope {

/// Overrides accepted by make_env.
struct EnvConfig {
  std::size_t dim = 10;
  std::size_t num_actions = 10;
  double beta = 1.0;
  double sigma_L = 1.0;
  double rho0 = -0.4;
  double tau = 2.0;
  double target_censoring_rate = 0.3;
  /// Size of the reference samples used for standardization and calibration.
  std::size_t reference_size = 100'000;
  /// Per-action base cost; empty means the default 0.5 * a.
  std::vector<double> base_costs;
};

/// Frozen constants of one synthetic environment.
///
/// Survival:  L ~ LogNormal(mu_L(x, a), sigma_L^2)
///            mu_L = (mu~_L - mu_mean) / mu_std + 0.5
///            mu~_L = 0.1 theta_L^T phi(x, a) + 5 (-1)^(a mod 2) (x_j x_k + x_m^2)
/// Censoring: C ~ Exponential with mean lambda0(x, a)
///            log lambda0 = theta_C^T phi(x, a) + rho0 mu_L(x, a) + delta_C
struct EnvParams {
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::size_t num_actions = 0;
  double beta = 1.0;
  std::vector<double> theta_pi;  // dim x num_actions, row-major
  std::vector<double> theta_L;   // dim + K + dim * K
  std::vector<double> theta_C;   // dim + K + dim * K
  double sigma_L = 1.0;
  double rho0 = -0.4;
  double delta_C = 0.0;
  double mu_mean = 0.0;
  double mu_std = 1.0;
  double tau = 2.0;
  double target_censoring_rate = 0.3;
  double calibrated_censoring_rate = 0.0;  // on the calibration reference sample
  std::vector<double> base_costs;

  std::size_t feature_dim() const { return dim + num_actions + dim * num_actions; }
  bool operator==(const EnvParams&) const = default;
};

void to_json(nlohmann::json& j, const EnvParams& env);
void from_json(const nlohmann::json& j, EnvParams& env);

/// Draws the weights, freezes the mu~_L standardization moments on a reference
/// sample, and calibrates delta_C by bisection so that P(L > C) on a second
/// (fixed) reference sample lands within 0.01 of the target.
EnvParams make_env(std::uint64_t seed, const EnvConfig& config);

/// phi(x, a) = [x, e_a, x (x) e_a]; the interaction block a holds x, i.e.
/// phi[d + K + a * d + j] = x_j.
std::vector<double> feature_map(std::span<const double> context, std::size_t action,
                                std::size_t dim, std::size_t num_actions);

/// Unstandardized mu~_L(x, a).
double raw_survival_location(const EnvParams& env, std::span<const double> context,
                             std::size_t action);
/// Standardized mu_L(x, a).
double survival_location(const EnvParams& env, std::span<const double> context,
                         std::size_t action);
/// lambda0(x, a): mean of the exponential censoring time.
double censoring_scale(const EnvParams& env, std::span<const double> context,
                       std::size_t action);

std::shared_ptr<SoftmaxLinearPolicy> logging_policy(const EnvParams& env);

/// A generated observation together with its latent times (test oracles only).
struct EnvSample {
  LoggedRecord record;
  double latent_survival = 0.0;
  double latent_censoring = 0.0;
};

struct GeneratedData {
  Dataset dataset;
  std::vector<EnvSample> samples;  // filled only when latents were requested
};

/// Draws n records under the logging policy. Contexts/actions, survival times
/// and censoring times come from three independent streams of `seed`. With a
/// cost vector, cost = base_cost[a] when the event is observed and 0 otherwise.
GeneratedData generate_dataset(const EnvParams& env, std::size_t n, std::uint64_t seed,
                               bool with_latents = false,
                               std::optional<std::vector<double>> cost_spec = std::nullopt);

/// Standard-normal context draw.
std::vector<double> sample_context(const EnvParams& env, Rng& rng);

double true_survival(const EnvParams& env, std::span<const double> context, std::size_t action,
                     double t);
double true_censoring_survival(const EnvParams& env, std::span<const double> context,
                               std::size_t action, double t);
/// Trapezoid RMST over the grid, S(0) = 1 included.
double true_rmst(const EnvParams& env, std::span<const double> context, std::size_t action,
                 const TimeGrid& grid);
/// P(L <= C | x, a), by quadrature over the log-normal survival time.
double true_event_probability(const EnvParams& env, std::span<const double> context,
                              std::size_t action);

/// Oracle-greedy action: argmax_a true_rmst(x, a), lowest index on ties.
/// The RMST of a log-normal with shared sigma is strictly increasing in mu_L,
/// so this is the argmax of mu_L(x, a).
std::size_t oracle_best_action(const EnvParams& env, std::span<const double> context);

struct MonteCarloValue {
  double value = 0.0;
  double std_error = 0.0;
};

/// V^tau(pi) ~ mean over n_test contexts of sum_a pi(a | x) RMST(x, a).
MonteCarloValue true_policy_value(const EnvParams& env, const Policy& policy,
                                  const TimeGrid& grid, std::size_t n_test, std::uint64_t seed);
/// V(pi, t) ~ mean over contexts of sum_a pi(a | x) S(x, a, t).
MonteCarloValue true_point_value(const EnvParams& env, const Policy& policy, double t,
                                 std::size_t n_test, std::uint64_t seed);
/// Several policies evaluated on one shared set of contexts (common random numbers).
std::vector<MonteCarloValue> true_policy_values(const EnvParams& env,
                                                std::span<const Policy* const> policies,
                                                const TimeGrid& grid, std::size_t n_test,
                                                std::uint64_t seed);
/// E[c] under pi with c = base_cost[a] 1{event}.
MonteCarloValue true_policy_cost(const EnvParams& env, const Policy& policy,
                                 std::size_t n_test, std::uint64_t seed);

/// pi_e(a | x; eps) = (1 - eps) 1{a = argmax RMST} + eps / K.
std::shared_ptr<EpsilonGreedyPolicy> make_eval_policy(const EnvParams& env, double epsilon);

/// Fresh Monte Carlo estimate of P(L > C) over n draws.
double censoring_fraction(const EnvParams& env, std::size_t n, std::uint64_t seed);

/// Oracle S(x, a, t) as a SurvivalModel.
class TrueSurvivalModel final : public SurvivalModel {
 public:
  explicit TrueSurvivalModel(std::shared_ptr<const EnvParams> env) : env_(std::move(env)) {}
  double survival(std::span<const double> context, std::size_t action, double t) const override;
  void curve(std::span<const double> context, std::size_t action, std::span<const double> times,
             std::span<double> out) const override;

 private:
  std::shared_ptr<const EnvParams> env_;
};

/// Oracle G(t | x, a) as a SurvivalModel.
class TrueCensoringModel final : public SurvivalModel {
 public:
  explicit TrueCensoringModel(std::shared_ptr<const EnvParams> env) : env_(std::move(env)) {}
  double survival(std::span<const double> context, std::size_t action, double t) const override;
  void curve(std::span<const double> context, std::size_t action, std::span<const double> times,
             std::span<double> out) const override;

 private:
  std::shared_ptr<const EnvParams> env_;
};

}  // namespace survope
