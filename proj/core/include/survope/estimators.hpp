#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "survope/nuisance.hpp"
#include "survope/policy.hpp"
#include "survope/synthenv.hpp"
#include "survope/types.hpp"

namespace survope {

enum class Estimator { kDM, kIPS, kDR, kIpcwIPS, kIpcwDR };

std::string to_string(Estimator estimator);
Estimator estimator_from_string(const std::string& name);
const std::vector<Estimator>& all_estimators();

/// Survival probability at a single time.
struct PointTarget {
  double t = 0.0;
};
/// Restricted mean survival time over a grid.
struct RmstTarget {
  double tau = 0.0;
  std::size_t num_points = 0;
};
using Target = std::variant<PointTarget, RmstTarget>;

std::string describe(const Target& target);

struct EstimateReport {
  Estimator estimator = Estimator::kDM;
  Target target = PointTarget{};
  double value = 0.0;
  std::vector<double> per_sample;
  std::size_t clamp_count = 0;  // evaluations where G_hat fell below the floor
};

void to_json(nlohmann::json& j, const EstimateReport& report);

/// (1/n) sum_i sum_a pi_e(a | x_i) S_hat(x_i, a, t)
EstimateReport estimate_dm(const Dataset& dataset, const Policy& eval_policy,
                           const NuisanceBundle& nuisance, double t);
/// (1/n) sum_i w_i 1{T_i > t}
EstimateReport estimate_ips_naive(const Dataset& dataset, const Policy& eval_policy,
                                  const NuisanceBundle& nuisance, double t);
/// (1/n) sum_i [w_i (1{T_i > t} - S_hat_i) + sum_a pi_e S_hat]
EstimateReport estimate_dr_naive(const Dataset& dataset, const Policy& eval_policy,
                                 const NuisanceBundle& nuisance, double t);
/// (1/n) sum_i w_i 1{T_i > t} / G_hat(t | x_i, a_i)
EstimateReport estimate_ipcw_ips(const Dataset& dataset, const Policy& eval_policy,
                                 const NuisanceBundle& nuisance, double t);
/// (1/n) sum_i [w_i (1{T_i > t} / G_hat_i - S_hat_i) + sum_a pi_e S_hat]
EstimateReport estimate_ipcw_dr(const Dataset& dataset, const Policy& eval_policy,
                                const NuisanceBundle& nuisance, double t);

EstimateReport estimate_point(const Dataset& dataset, const Policy& eval_policy,
                              const NuisanceBundle& nuisance, double t, Estimator which);

/// Trapezoid integral of the point estimator over {0, t_1, ..., t_M}.
EstimateReport estimate_rmst(const Dataset& dataset, const Policy& eval_policy,
                             const NuisanceBundle& nuisance, const TimeGrid& grid,
                             Estimator which);

/// Several estimators for one target, sharing the nuisance evaluations.
std::vector<EstimateReport> estimate_many(const Dataset& dataset, const Policy& eval_policy,
                                          const NuisanceBundle& nuisance, const Target& target,
                                          const std::vector<Estimator>& which);

/// Monte Carlo value of E_{p(x) pi_e(a|x)}[S(x, a, t) (G(t | x, a) - 1)], the
/// bias shared by naive IPS and naive DR.
MonteCarloValue naive_bias_oracle(const EnvParams& env, const Policy& eval_policy, double t,
                                  std::size_t n_mc, std::uint64_t seed);

struct TrialMetrics {
  std::string estimator;
  double mse = 0.0;
  double squared_bias = 0.0;
  double variance = 0.0;  // mean squared deviation from the mean estimate
  std::size_t n_trials = 0;
  double mean = 0.0;
};

TrialMetrics aggregate_trials(const std::vector<double>& estimates, double truth,
                              std::string estimator = {});

/// `estimator,target,value,clamp_count`
std::string estimate_csv_header();
std::string estimate_csv_row(const EstimateReport& report);

/// Factor levels a TrialMetrics row was computed at.
struct TrialFactors {
  std::size_t n = 0;
  double rho1 = 0.0;
  double epsilon = 0.0;
  double beta = 0.0;
};

/// `estimator,n,rho1,epsilon,beta,mse,squared_bias,variance`
std::string trial_metrics_csv_header();
std::string trial_metrics_csv_row(const TrialMetrics& metrics, const TrialFactors& factors);

}  // namespace survope
