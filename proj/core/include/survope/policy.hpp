#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace survope {

/// Conditional action distribution pi(a | x) over K discrete actions.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual std::size_t num_actions() const = 0;

  /// Writes pi(. | context) into `out` (length K). Entries are nonnegative and
  /// sum to one.
  virtual void probs_into(std::span<const double> context, std::span<double> out) const = 0;

  std::vector<double> probs(std::span<const double> context) const;
  double prob(std::span<const double> context, std::size_t action) const;
};

/// A policy with trainable parameters theta and d/dtheta log pi(a | x).
class DifferentiablePolicy : public Policy {
 public:
  virtual std::size_t num_parameters() const = 0;
  virtual Eigen::VectorXd log_prob_gradient(std::span<const double> context,
                                            std::size_t action) const = 0;
};

class UniformPolicy final : public Policy {
 public:
  explicit UniformPolicy(std::size_t num_actions) : num_actions_(num_actions) {}
  std::size_t num_actions() const override { return num_actions_; }
  void probs_into(std::span<const double> context, std::span<double> out) const override;

 private:
  std::size_t num_actions_;
};

/// Always plays the same action.
class FixedActionPolicy final : public Policy {
 public:
  FixedActionPolicy(std::size_t num_actions, std::size_t action);
  std::size_t num_actions() const override { return num_actions_; }
  void probs_into(std::span<const double> context, std::span<double> out) const override;

 private:
  std::size_t num_actions_;
  std::size_t action_;
};

/// pi(a | x) = softmax_a(beta * (x^T W[:, a] + b_a)); W is d x K row-major.
class SoftmaxLinearPolicy final : public Policy {
 public:
  SoftmaxLinearPolicy(std::size_t dim, std::size_t num_actions, std::vector<double> weights,
                      std::vector<double> intercepts, double beta = 1.0);

  std::size_t num_actions() const override { return num_actions_; }
  std::size_t dim() const { return dim_; }
  double beta() const { return beta_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& intercepts() const { return intercepts_; }

  void probs_into(std::span<const double> context, std::span<double> out) const override;

 private:
  std::size_t dim_;
  std::size_t num_actions_;
  std::vector<double> weights_;
  std::vector<double> intercepts_;
  double beta_;
};

/// (1 - epsilon) on best_action(x) plus epsilon / K spread uniformly. With
/// epsilon = 0 this is a deterministic argmax policy.
class EpsilonGreedyPolicy final : public Policy {
 public:
  using Selector = std::function<std::size_t(std::span<const double>)>;

  EpsilonGreedyPolicy(std::size_t num_actions, double epsilon, Selector best_action);

  std::size_t num_actions() const override { return num_actions_; }
  double epsilon() const { return epsilon_; }
  std::size_t best_action(std::span<const double> context) const { return best_action_(context); }

  void probs_into(std::span<const double> context, std::span<double> out) const override;

 private:
  std::size_t num_actions_;
  double epsilon_;
  Selector best_action_;
};

/// Numerically stable in-place softmax.
void softmax_in_place(std::span<double> scores);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

}  // namespace survope
