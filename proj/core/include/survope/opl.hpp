#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "survope/estimators.hpp"
#include "survope/mlp_policy.hpp"
#include "survope/nuisance.hpp"
#include "survope/synthenv.hpp"
#include "survope/types.hpp"

namespace survope {

/// Direction of the survival term in the learning objective.
enum class ObjectiveSense { kMaximize, kMinimize };

/// Any of the estimators written as V_hat(pi) = (1/n) sum_i sum_a C(a, i) pi(a | x_i).
/// The coefficients depend only on the logged data and the nuisances, so the
/// objective is linear in the policy's action probabilities and its gradient
/// is exactly the score-function estimator of the same name.
struct ObjectiveTable {
  Eigen::MatrixXd contexts;          // d x n
  Eigen::MatrixXd coefficients;      // K x n, survival part
  Eigen::VectorXd cost_coefficients; // n: c_i / pi0_hat(a_i | x_i), zero without costs
  std::vector<std::size_t> actions;

  std::size_t size() const { return actions.size(); }
  ObjectiveTable subset(const std::vector<std::size_t>& indices) const;
};

/// Builds the table for a point or RMST target. Throws on a propensity of zero
/// at a logged action. Cost coefficients are filled when the dataset has costs.
ObjectiveTable build_objective_table(const Dataset& dataset, const NuisanceBundle& nuisance,
                                     const Target& target, Estimator estimator,
                                     ObjectiveSense sense = ObjectiveSense::kMaximize);

/// Objective value (1/n) sum_i [sum_a C(a,i) pi(a|x_i) - lambda pi(a_i|x_i) cost_i].
double table_objective(const MlpPolicy& policy, const ObjectiveTable& table, double lambda = 0.0);
/// Gradient of table_objective.
Eigen::VectorXd table_gradient(const MlpPolicy& policy, const ObjectiveTable& table,
                               double lambda = 0.0);
/// IPS cost estimate (1/n) sum_i pi(a_i | x_i) / pi0_hat(a_i | x_i) c_i.
double table_cost(const MlpPolicy& policy, const ObjectiveTable& table);

struct GradientEstimate {
  Eigen::VectorXd mean;
  Eigen::VectorXd std_error;
};

/// E_{p(x) pi_theta}[S(x, a, t) grad log pi_theta(a | x)] by Monte Carlo over
/// contexts and exact summation over actions.
GradientEstimate policy_gradient_true(const EnvParams& env, const MlpPolicy& policy, double t,
                                      std::size_t n_mc, std::uint64_t seed);

Eigen::VectorXd grad_ipcw_ips(const Dataset& dataset, const MlpPolicy& policy,
                              const NuisanceBundle& nuisance, double t);
Eigen::VectorXd grad_ipcw_dr(const Dataset& dataset, const MlpPolicy& policy,
                             const NuisanceBundle& nuisance, double t);

enum class NaiveVariant { kIPS, kDR };
/// The IPS / DR gradients with G_hat replaced by 1.
Eigen::VectorXd grad_naive(const Dataset& dataset, const MlpPolicy& policy,
                           const NuisanceBundle& nuisance, double t, NaiveVariant variant);

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double validation_fraction = 0.3;
  TimeGrid grid{2.0, 100};
  /// Train on the survival probability at this time instead of the RMST.
  std::optional<double> point_time;
  Estimator estimator = Estimator::kIpcwDR;
  ObjectiveSense sense = ObjectiveSense::kMaximize;
  std::vector<std::size_t> hidden = {64, 64};
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  MlpPolicy policy;
  MlpPolicy initial_policy;
  MlpPolicy last_policy;  // parameters after the final epoch run
  double best_validation = 0.0;
  std::size_t best_epoch = 0;   // 0 = initialization
  std::size_t epochs_run = 0;
  std::vector<double> validation_trace;  // index 0 = initialization
};

/// Minibatch Adam ascent on the estimator's objective with early stopping on
/// the held-out split; returns the best-validation snapshot.
TrainResult train_policy(const Dataset& dataset, const NuisanceBundle& nuisance,
                         const TrainConfig& config);

/// Deterministic argmax_a of the trapezoid-integrated outcome model.
std::shared_ptr<EpsilonGreedyPolicy> regression_learner(
    std::shared_ptr<const SurvivalModel> outcome, const TimeGrid& grid, std::size_t num_actions,
    ObjectiveSense sense = ObjectiveSense::kMaximize);

/// V^tau(learned) / V^tau(logging policy) on shared test contexts.
double evaluate_improvement(const EnvParams& env, const Policy& learned, const TimeGrid& grid,
                            std::size_t n_test, std::uint64_t seed);

struct LagrangianConfig {
  double lambda_init = 3.0;
  double budget = 0.0;
  double safety_margin = 0.05;
  double lambda_lr = 0.05;
  double policy_lr = 1e-3;
  std::size_t batch_size = 512;
  std::size_t epochs = 500;
  /// Held out exactly as in train_policy (same seeded split); 0 trains on everything.
  double validation_fraction = 0.3;
  TimeGrid grid{2.0, 100};
  std::optional<double> point_time;
  Estimator estimator = Estimator::kIpcwDR;
  ObjectiveSense sense = ObjectiveSense::kMaximize;
  std::vector<std::size_t> hidden = {64, 64};
  std::uint64_t seed = 0;

  void validate() const;
};

struct LagrangianStep {
  std::size_t epoch = 0;
  double lambda = 0.0;          // after the dual update
  double estimated_cost = 0.0;  // C_hat(pi_theta) before the dual update
  double objective = 0.0;       // survival part of the estimator
};

struct ConstrainedResult {
  MlpPolicy policy;
  std::vector<LagrangianStep> trace;
};

/// Primal-dual learner: each epoch runs Adam ascent over minibatches on
/// V_hat - lambda C_hat, then lambda <- max(0, lambda + lr (C_hat - (B - margin))).
ConstrainedResult train_constrained(const Dataset& dataset, const NuisanceBundle& nuisance,
                                    const LagrangianConfig& config);

/// Policy JSON with optional metadata (config, validation value, lambda trace).
nlohmann::json policy_document(const MlpPolicy& policy, const nlohmann::json& metadata = {});

}  // namespace survope
