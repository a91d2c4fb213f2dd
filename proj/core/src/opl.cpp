#include "survope/opl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace survope {

namespace {

struct TargetGrid {
  std::vector<double> times;
  std::vector<double> weights;
};

TargetGrid target_grid(const Target& target) {
  if (const auto* p = std::get_if<PointTarget>(&target)) {
    if (p->t < 0.0) throw Error("objective: t must be nonnegative");
    return {{p->t}, {1.0}};
  }
  const auto& r = std::get<RmstTarget>(target);
  const TimeGrid grid(r.tau, r.num_points);
  return {grid.points_with_origin(), grid.trapezoid_weights()};
}

Target train_target(const TimeGrid& grid, const std::optional<double>& point_time) {
  if (point_time) return PointTarget{*point_time};
  return RmstTarget{grid.tau(), grid.num_points()};
}

Eigen::MatrixXd lagrangian_coefficients(const ObjectiveTable& table, double lambda) {
  Eigen::MatrixXd c = table.coefficients;
  if (lambda != 0.0) {
    for (std::size_t i = 0; i < table.size(); ++i) {
      c(static_cast<Eigen::Index>(table.actions[i]), static_cast<Eigen::Index>(i)) -=
          lambda * table.cost_coefficients[static_cast<Eigen::Index>(i)];
    }
  }
  return c;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  return idx;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

Split split_indices(std::size_t n, double validation_fraction, std::uint64_t seed) {
  auto rng = seeded_rng(seed, 1);
  auto idx = shuffled_indices(n, rng);
  const auto n_val =
      static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  Split s;
  s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  return s;
}

class Adam {
 public:
  Adam(Eigen::Index size, double lr)
      : lr_(lr), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  /// Ascent step.
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
    v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    params.array() += lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

/// One pass of minibatch Adam over `train` in a freshly shuffled order.
void run_epoch(MlpPolicy& policy, Adam& adam, const ObjectiveTable& table,
               const std::vector<std::size_t>& train, std::size_t batch_size, double lambda,
               Rng& shuffle_rng, std::size_t epoch) {
  const auto order = shuffled_indices(train.size(), shuffle_rng);
  Eigen::VectorXd params = policy.parameters();
  std::vector<std::size_t> batch;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    batch.clear();
    for (std::size_t k = start; k < stop; ++k) batch.push_back(train[order[k]]);
    const auto grad = table_gradient(policy, table.subset(batch), lambda);
    if (!grad.allFinite()) {
      throw Error("training diverged: non-finite gradient at epoch " + std::to_string(epoch));
    }
    adam.step(params, grad);
    policy.set_parameters(params);
  }
}

}  // namespace

ObjectiveTable ObjectiveTable::subset(const std::vector<std::size_t>& indices) const {
  ObjectiveTable out;
  const auto m = static_cast<Eigen::Index>(indices.size());
  out.contexts.resize(contexts.rows(), m);
  out.coefficients.resize(coefficients.rows(), m);
  out.cost_coefficients.resize(m);
  out.actions.reserve(indices.size());
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(k)]);
    if (static_cast<std::size_t>(i) >= size()) throw Error("ObjectiveTable::subset: index out of range");
    out.contexts.col(k) = contexts.col(i);
    out.coefficients.col(k) = coefficients.col(i);
    out.cost_coefficients[k] = cost_coefficients[i];
    out.actions.push_back(actions[static_cast<std::size_t>(i)]);
  }
  return out;
}

ObjectiveTable build_objective_table(const Dataset& dataset, const NuisanceBundle& nuisance,
                                     const Target& target, Estimator estimator,
                                     ObjectiveSense sense) {
  require_nonempty(dataset, "objective");
  const std::size_t K = dataset.num_actions();
  const std::size_t n = dataset.size();
  const bool use_prop = estimator != Estimator::kDM || dataset.has_costs();
  const bool use_out = estimator == Estimator::kDM || estimator == Estimator::kDR ||
                       estimator == Estimator::kIpcwDR;
  const bool use_cens = estimator == Estimator::kIpcwIPS || estimator == Estimator::kIpcwDR;
  if (use_prop && !nuisance.propensity) throw Error("objective: a propensity source is required");
  if (use_out && !nuisance.outcome) throw Error("objective: an outcome model is required");
  if (use_cens && !nuisance.censoring) throw Error("objective: a censoring model is required");

  const auto [times, weights] = target_grid(target);
  const std::size_t nt = times.size();
  const double sign = sense == ObjectiveSense::kMaximize ? 1.0 : -1.0;

  ObjectiveTable table;
  table.contexts.resize(static_cast<Eigen::Index>(dataset.dim()), static_cast<Eigen::Index>(n));
  table.coefficients = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
  table.cost_coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  table.actions.resize(n);

  std::vector<double> p0(K);
  std::vector<double> s(nt);
  std::vector<double> s_logged(nt, 0.0);
  std::vector<double> g(nt, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = dataset[i];
    const auto col = static_cast<Eigen::Index>(i);
    const std::span<const double> x(rec.context);
    for (std::size_t j = 0; j < dataset.dim(); ++j) table.contexts(static_cast<Eigen::Index>(j), col) = x[j];
    table.actions[i] = rec.action;

    double inv_p0 = 0.0;
    if (use_prop) {
      nuisance.propensity->probs_into(x, p0);
      if (!(p0[rec.action] > 0.0)) {
        throw Error("objective: record " + std::to_string(i) +
                    " has zero logging propensity (common support violated)");
      }
      inv_p0 = 1.0 / p0[rec.action];
    }
    if (use_out) {
      for (std::size_t a = 0; a < K; ++a) {
        nuisance.outcome->curve(x, a, times, s);
        double integral = 0.0;
        for (std::size_t j = 0; j < nt; ++j) integral += weights[j] * s[j];
        table.coefficients(static_cast<Eigen::Index>(a), col) = integral;
        if (a == rec.action) s_logged = s;
      }
    }
    if (use_cens) {
      nuisance.censoring->curve(x, rec.action, times, g);
      for (auto& gj : g) gj = clamp_censoring_weight(gj, nuisance.weight_floor);
    }
    if (estimator != Estimator::kDM) {
      double residual = 0.0;
      for (std::size_t j = 0; j < nt; ++j) {
        const double ind = rec.observed_time > times[j] ? 1.0 : 0.0;
        double reward = ind;
        if (use_cens && ind > 0.0) {
          if (g[j] <= 0.0) {
            throw Error("objective: censoring survival is zero for a record still at risk; "
                        "use a positive weight floor");
          }
          reward = ind / g[j];
        }
        const double base = use_out ? s_logged[j] : 0.0;
        residual += weights[j] * (reward - base);
      }
      table.coefficients(static_cast<Eigen::Index>(rec.action), col) += residual * inv_p0;
    }
    if (dataset.has_costs()) table.cost_coefficients[col] = *rec.cost * inv_p0;
  }
  table.coefficients *= sign;
  return table;
}

double table_objective(const MlpPolicy& policy, const ObjectiveTable& table, double lambda) {
  if (table.size() == 0) throw Error("objective: empty table");
  const Eigen::MatrixXd p = policy.batch_probs(table.contexts);
  return p.cwiseProduct(lagrangian_coefficients(table, lambda)).sum() /
         static_cast<double>(table.size());
}

Eigen::VectorXd table_gradient(const MlpPolicy& policy, const ObjectiveTable& table,
                               double lambda) {
  if (table.size() == 0) throw Error("objective: empty table");
  return policy.linear_objective_gradient(table.contexts, lagrangian_coefficients(table, lambda)) /
         static_cast<double>(table.size());
}

double table_cost(const MlpPolicy& policy, const ObjectiveTable& table) {
  if (table.size() == 0) throw Error("objective: empty table");
  const Eigen::MatrixXd p = policy.batch_probs(table.contexts);
  double total = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    total += p(static_cast<Eigen::Index>(table.actions[i]), static_cast<Eigen::Index>(i)) *
             table.cost_coefficients[static_cast<Eigen::Index>(i)];
  }
  return total / static_cast<double>(table.size());
}

GradientEstimate policy_gradient_true(const EnvParams& env, const MlpPolicy& policy, double t,
                                      std::size_t n_mc, std::uint64_t seed) {
  if (n_mc == 0) throw Error("policy_gradient_true: n_mc must be at least 1");
  if (policy.dim() != env.dim || policy.num_actions() != env.num_actions) {
    throw Error("policy_gradient_true: policy shape does not match the environment");
  }
  // Standard errors come from batch means over equal contiguous blocks.
  constexpr std::size_t kBlocks = 50;
  constexpr std::size_t kChunk = 4096;
  const std::size_t blocks = std::min(kBlocks, n_mc);
  auto rng = seeded_rng(seed, 10);
  const auto P = static_cast<Eigen::Index>(policy.num_parameters());
  Eigen::VectorXd total = Eigen::VectorXd::Zero(P);
  Eigen::VectorXd total_sq = Eigen::VectorXd::Zero(P);
  std::size_t done = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t block_end = n_mc * (b + 1) / blocks;
    const std::size_t block_size = block_end - done;
    Eigen::VectorXd block_sum = Eigen::VectorXd::Zero(P);
    while (done < block_end) {
      const std::size_t m = std::min(kChunk, block_end - done);
      Eigen::MatrixXd x(static_cast<Eigen::Index>(env.dim), static_cast<Eigen::Index>(m));
      Eigen::MatrixXd s(static_cast<Eigen::Index>(env.num_actions), static_cast<Eigen::Index>(m));
      for (std::size_t i = 0; i < m; ++i) {
        const auto ctx = sample_context(env, rng);
        for (std::size_t j = 0; j < env.dim; ++j) {
          x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = ctx[j];
        }
        for (std::size_t a = 0; a < env.num_actions; ++a) {
          s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) = true_survival(env, ctx, a, t);
        }
      }
      block_sum += policy.linear_objective_gradient(x, s);
      done += m;
    }
    const Eigen::VectorXd block_mean = block_sum / static_cast<double>(block_size);
    total += block_sum;
    total_sq += block_mean.cwiseAbs2();
  }
  GradientEstimate out;
  out.mean = total / static_cast<double>(n_mc);
  if (blocks > 1) {
    const double nb = static_cast<double>(blocks);
    // Blocks differ in size by at most one record, so they are treated as equal.
    const Eigen::VectorXd block_var =
        ((total_sq - nb * out.mean.cwiseAbs2()) / (nb - 1.0)).cwiseMax(0.0);
    out.std_error = (block_var / nb).cwiseSqrt();
  } else {
    out.std_error = Eigen::VectorXd::Zero(P);
  }
  return out;
}

Eigen::VectorXd grad_ipcw_ips(const Dataset& dataset, const MlpPolicy& policy,
                              const NuisanceBundle& nuisance, double t) {
  return table_gradient(policy,
                        build_objective_table(dataset, nuisance, PointTarget{t}, Estimator::kIpcwIPS));
}

Eigen::VectorXd grad_ipcw_dr(const Dataset& dataset, const MlpPolicy& policy,
                             const NuisanceBundle& nuisance, double t) {
  return table_gradient(policy,
                        build_objective_table(dataset, nuisance, PointTarget{t}, Estimator::kIpcwDR));
}

Eigen::VectorXd grad_naive(const Dataset& dataset, const MlpPolicy& policy,
                           const NuisanceBundle& nuisance, double t, NaiveVariant variant) {
  const auto est = variant == NaiveVariant::kIPS ? Estimator::kIPS : Estimator::kDR;
  return table_gradient(policy, build_objective_table(dataset, nuisance, PointTarget{t}, est));
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and nonnegative");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
  if (point_time && !(*point_time >= 0.0)) throw ConfigError("point_time must be nonnegative");
}

TrainResult train_policy(const Dataset& dataset, const NuisanceBundle& nuisance,
                         const TrainConfig& config) {
  config.validate();
  const auto table = build_objective_table(dataset, nuisance,
                                           train_target(config.grid, config.point_time),
                                           config.estimator, config.sense);
  const auto split = split_indices(table.size(), config.validation_fraction, config.seed);
  if (split.train.empty() || split.validation.empty()) {
    throw Error("train_policy: dataset too small for a train/validation split");
  }
  const auto validation = table.subset(split.validation);

  auto init_rng = seeded_rng(config.seed, 0);
  auto shuffle_rng = seeded_rng(config.seed, 2);
  MlpPolicy policy = MlpPolicy::xavier(dataset.dim(), dataset.num_actions(), init_rng, config.hidden);
  TrainResult result{policy, policy, policy, 0.0, 0, 0, {}};
  result.best_validation = table_objective(policy, validation);
  result.validation_trace.push_back(result.best_validation);

  Adam adam(static_cast<Eigen::Index>(policy.num_parameters()), config.learning_rate);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    run_epoch(policy, adam, table, split.train, config.batch_size, 0.0, shuffle_rng, epoch);
    const double value = table_objective(policy, validation);
    if (!std::isfinite(value)) {
      throw Error("training diverged: non-finite validation objective at epoch " +
                  std::to_string(epoch));
    }
    result.validation_trace.push_back(value);
    result.epochs_run = epoch;
    if (value > result.best_validation) {
      result.best_validation = value;
      result.best_epoch = epoch;
      result.policy = policy;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.last_policy = policy;
  return result;
}

std::shared_ptr<EpsilonGreedyPolicy> regression_learner(
    std::shared_ptr<const SurvivalModel> outcome, const TimeGrid& grid, std::size_t num_actions,
    ObjectiveSense sense) {
  if (!outcome) throw Error("regression_learner: outcome model is required");
  const auto times = grid.points_with_origin();
  const auto weights = grid.trapezoid_weights();
  const double sign = sense == ObjectiveSense::kMaximize ? 1.0 : -1.0;
  auto selector = [outcome, times, weights, num_actions, sign](std::span<const double> x) {
    std::vector<double> s(times.size());
    std::vector<double> value(num_actions);
    for (std::size_t a = 0; a < num_actions; ++a) {
      outcome->curve(x, a, times, s);
      double v = 0.0;
      for (std::size_t j = 0; j < s.size(); ++j) v += weights[j] * s[j];
      value[a] = sign * v;
    }
    return argmax_lowest(value);
  };
  return std::make_shared<EpsilonGreedyPolicy>(num_actions, 0.0, std::move(selector));
}

double evaluate_improvement(const EnvParams& env, const Policy& learned, const TimeGrid& grid,
                            std::size_t n_test, std::uint64_t seed) {
  const auto logging = logging_policy(env);
  const std::vector<const Policy*> policies{&learned, logging.get()};
  const auto values = true_policy_values(env, policies, grid, n_test, seed);
  return values[0].value / values[1].value;
}

void LagrangianConfig::validate() const {
  if (!(lambda_init >= 0.0) || !std::isfinite(lambda_init)) {
    throw ConfigError("lambda_init must be finite and nonnegative");
  }
  if (!std::isfinite(budget)) throw ConfigError("budget must be finite");
  if (!(lambda_lr >= 0.0) || !(policy_lr >= 0.0)) throw ConfigError("learning rates must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  if (point_time && !(*point_time >= 0.0)) throw ConfigError("point_time must be nonnegative");
}

ConstrainedResult train_constrained(const Dataset& dataset, const NuisanceBundle& nuisance,
                                    const LagrangianConfig& config) {
  config.validate();
  require_nonempty(dataset, "train_constrained");
  if (!dataset.has_costs()) throw Error("train_constrained: every record must carry a cost");
  const auto table = build_objective_table(dataset, nuisance,
                                           train_target(config.grid, config.point_time),
                                           config.estimator, config.sense);
  const auto split = split_indices(table.size(), config.validation_fraction, config.seed);
  if (split.train.empty()) throw Error("train_constrained: empty training split");
  const auto train = table.subset(split.train);

  auto init_rng = seeded_rng(config.seed, 0);
  auto shuffle_rng = seeded_rng(config.seed, 2);
  MlpPolicy policy = MlpPolicy::xavier(dataset.dim(), dataset.num_actions(), init_rng, config.hidden);
  Adam adam(static_cast<Eigen::Index>(policy.num_parameters()), config.policy_lr);
  double lambda = config.lambda_init;
  const double target = config.budget - config.safety_margin;

  ConstrainedResult result{policy, {}};
  result.trace.reserve(config.epochs);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    run_epoch(policy, adam, table, split.train, config.batch_size, lambda, shuffle_rng, epoch);
    const double cost = table_cost(policy, train);
    const double objective = table_objective(policy, train);
    lambda = std::max(0.0, lambda + config.lambda_lr * (cost - target));
    if (!std::isfinite(cost) || !std::isfinite(objective) || !std::isfinite(lambda)) {
      throw Error("constrained training diverged at epoch " + std::to_string(epoch));
    }
    result.trace.push_back({epoch, lambda, cost, objective});
  }
  result.policy = policy;
  return result;
}

nlohmann::json policy_document(const MlpPolicy& policy, const nlohmann::json& metadata) {
  nlohmann::json doc = policy;
  if (!metadata.is_null()) doc["metadata"] = metadata;
  return doc;
}

}  // namespace survope
