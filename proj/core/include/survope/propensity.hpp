#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "survope/policy.hpp"
#include "survope/types.hpp"

namespace survope {

struct PropensityFitOptions {
  double l2 = 1e-4;
  std::size_t max_iters = 500;
  double tol = 1e-6;
};

/// Multinomial logistic regression pi0_hat(a | x). The last class has its
/// weights and intercept pinned to zero.
class PropensityModel final : public Policy {
 public:
  PropensityModel(std::size_t dim, std::size_t num_actions);

  std::size_t num_actions() const override { return num_actions_; }
  std::size_t dim() const { return dim_; }
  void probs_into(std::span<const double> context, std::span<double> out) const override;

  /// dim x K, row-major.
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& intercepts() const { return intercepts_; }

  bool fitted() const { return fitted_; }
  bool converged() const { return converged_; }
  std::size_t iterations() const { return iterations_; }
  /// Max-norm of the penalized log-likelihood gradient at the returned point.
  double gradient_norm() const { return gradient_norm_; }

 private:
  friend PropensityModel fit_propensity(const Dataset&, const PropensityFitOptions&);
  friend void from_json(const nlohmann::json&, PropensityModel&);

  std::size_t dim_;
  std::size_t num_actions_;
  std::vector<double> weights_;
  std::vector<double> intercepts_;
  bool fitted_ = false;
  bool converged_ = false;
  std::size_t iterations_ = 0;
  double gradient_norm_ = 0.0;
};

/// Maximizes mean log-likelihood - (l2 / 2) ||W||^2 (intercepts unpenalized)
/// by damped Newton ascent with Armijo backtracking. Failing to converge sets
/// converged() = false.
PropensityModel fit_propensity(const Dataset& dataset, const PropensityFitOptions& options = {});
void to_json(nlohmann::json& j, const PropensityModel& model);
void from_json(const nlohmann::json& j, PropensityModel& model);

}  // namespace survope
