#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "survope/policy.hpp"
#include "survope/random.hpp"

namespace survope {

/// Fully connected ReLU network with a softmax head: d -> h_1 -> ... -> K.
///
/// Parameters are stored flat, layer by layer, as the row-major weight matrix
/// (out x in) followed by the bias vector.
class MlpPolicy final : public DifferentiablePolicy {
 public:
  /// Zero-initialized network.
  MlpPolicy(std::size_t dim, std::size_t num_actions, std::vector<std::size_t> hidden = {64, 64});

  /// Xavier-uniform weights, zero biases.
  static MlpPolicy xavier(std::size_t dim, std::size_t num_actions, Rng& rng,
                          std::vector<std::size_t> hidden = {64, 64});

  std::size_t num_actions() const override { return layer_sizes_.back(); }
  std::size_t dim() const { return layer_sizes_.front(); }
  std::size_t num_parameters() const override { return static_cast<std::size_t>(params_.size()); }
  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }

  const Eigen::VectorXd& parameters() const { return params_; }
  void set_parameters(const Eigen::VectorXd& params);

  void probs_into(std::span<const double> context, std::span<double> out) const override;
  Eigen::VectorXd log_prob_gradient(std::span<const double> context,
                                    std::size_t action) const override;

  /// Column-wise probabilities for contexts stored as columns (d x B) -> K x B.
  Eigen::MatrixXd batch_probs(const Eigen::MatrixXd& contexts) const;

  /// Gradient of sum_i sum_a coeffs(a, i) pi(a | x_i) with respect to the
  /// parameters; the objective value itself is written to `objective` if given.
  Eigen::VectorXd linear_objective_gradient(const Eigen::MatrixXd& contexts,
                                            const Eigen::MatrixXd& coeffs,
                                            double* objective = nullptr) const;

  bool operator==(const MlpPolicy& other) const {
    return layer_sizes_ == other.layer_sizes_ && params_ == other.params_;
  }

 private:
  struct Forward {
    std::vector<Eigen::MatrixXd> activations;  // input, hidden..., probs
  };
  Forward forward(const Eigen::MatrixXd& contexts) const;
  /// Backprop of d(objective)/d(logits) through the hidden layers.
  Eigen::VectorXd backward(const Forward& fwd, const Eigen::MatrixXd& logit_grad) const;

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

  std::vector<std::size_t> layer_sizes_;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd params_;
};

void to_json(nlohmann::json& j, const MlpPolicy& policy);
MlpPolicy mlp_policy_from_json(const nlohmann::json& j);

}  // namespace survope
