#include "survope/policy.hpp"

#include <algorithm>
#include <cmath>

#include "survope/types.hpp"

namespace survope {

std::vector<double> Policy::probs(std::span<const double> context) const {
  std::vector<double> out(num_actions());
  probs_into(context, out);
  return out;
}

double Policy::prob(std::span<const double> context, std::size_t action) const {
  return probs(context).at(action);
}

void softmax_in_place(std::span<double> scores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (auto& s : scores) {
    s = std::exp(s - mx);
    total += s;
  }
  for (auto& s : scores) s /= total;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void UniformPolicy::probs_into(std::span<const double>, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(num_actions_));
}

FixedActionPolicy::FixedActionPolicy(std::size_t num_actions, std::size_t action)
    : num_actions_(num_actions), action_(action) {
  if (action >= num_actions) throw Error("fixed-action policy: action out of range");
}

void FixedActionPolicy::probs_into(std::span<const double>, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  out[action_] = 1.0;
}

SoftmaxLinearPolicy::SoftmaxLinearPolicy(std::size_t dim, std::size_t num_actions,
                                         std::vector<double> weights,
                                         std::vector<double> intercepts, double beta)
    : dim_(dim),
      num_actions_(num_actions),
      weights_(std::move(weights)),
      intercepts_(std::move(intercepts)),
      beta_(beta) {
  if (weights_.size() != dim * num_actions) throw Error("softmax policy: weight shape mismatch");
  if (intercepts_.empty()) intercepts_.assign(num_actions, 0.0);
  if (intercepts_.size() != num_actions) throw Error("softmax policy: intercept shape mismatch");
}

void SoftmaxLinearPolicy::probs_into(std::span<const double> x, std::span<double> out) const {
  for (std::size_t a = 0; a < num_actions_; ++a) out[a] = intercepts_[a];
  for (std::size_t j = 0; j < dim_; ++j) {
    const double* row = weights_.data() + j * num_actions_;
    for (std::size_t a = 0; a < num_actions_; ++a) out[a] += x[j] * row[a];
  }
  for (std::size_t a = 0; a < num_actions_; ++a) out[a] *= beta_;
  softmax_in_place(out.first(num_actions_));
}

EpsilonGreedyPolicy::EpsilonGreedyPolicy(std::size_t num_actions, double epsilon,
                                         Selector best_action)
    : num_actions_(num_actions), epsilon_(epsilon), best_action_(std::move(best_action)) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error("epsilon-greedy: epsilon must be in [0, 1]");
}

void EpsilonGreedyPolicy::probs_into(std::span<const double> context,
                                     std::span<double> out) const {
  const double floor = epsilon_ / static_cast<double>(num_actions_);
  std::fill(out.begin(), out.begin() + num_actions_, floor);
  out[best_action_(context)] += 1.0 - epsilon_;
}

}  // namespace survope
