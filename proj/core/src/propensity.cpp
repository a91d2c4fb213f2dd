#include "survope/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

namespace survope {

PropensityModel::PropensityModel(std::size_t dim, std::size_t num_actions)
    : dim_(dim),
      num_actions_(num_actions),
      weights_(dim * num_actions, 0.0),
      intercepts_(num_actions, 0.0) {}

void PropensityModel::probs_into(std::span<const double> x, std::span<double> out) const {
  for (std::size_t a = 0; a < num_actions_; ++a) out[a] = intercepts_[a];
  for (std::size_t j = 0; j < dim_; ++j) {
    const double* row = weights_.data() + j * num_actions_;
    for (std::size_t a = 0; a < num_actions_; ++a) out[a] += x[j] * row[a];
  }
  softmax_in_place(out.first(num_actions_));
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Parameters packed as [W (d x K-1, column-major) ; b (K-1)].
struct Problem {
  MatrixXd X;                 // n x d
  std::vector<std::size_t> y;
  std::size_t d;
  std::size_t K;
  double l2;

  std::size_t num_free() const { return (d + 1) * (K - 1); }

  MatrixXd scores(const VectorXd& theta) const {
    const Eigen::Map<const MatrixXd> W(theta.data(), static_cast<Eigen::Index>(d),
                                       static_cast<Eigen::Index>(K - 1));
    const Eigen::Map<const VectorXd> b(theta.data() + d * (K - 1), static_cast<Eigen::Index>(K - 1));
    MatrixXd s = MatrixXd::Zero(X.rows(), static_cast<Eigen::Index>(K));
    s.leftCols(static_cast<Eigen::Index>(K - 1)) = X * W;
    s.leftCols(static_cast<Eigen::Index>(K - 1)).rowwise() += b.transpose();
    return s;
  }

  // Returns the objective; fills gradient when requested.
  double evaluate(const VectorXd& theta, VectorXd* grad) const {
    MatrixXd s = scores(theta);
    const double n = static_cast<double>(X.rows());
    double loglik = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double mx = s.row(i).maxCoeff();
      const double lse = mx + std::log((s.row(i).array() - mx).exp().sum());
      loglik += s(i, static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)])) - lse;
      s.row(i) = (s.row(i).array() - lse).exp().matrix();
    }
    const Eigen::Map<const VectorXd> w(theta.data(), static_cast<Eigen::Index>(d * (K - 1)));
    const double value = loglik / n - 0.5 * l2 * w.squaredNorm();
    if (grad) {
      // residual = onehot(y) - P
      MatrixXd resid = -s.leftCols(static_cast<Eigen::Index>(K - 1));
      for (Eigen::Index i = 0; i < resid.rows(); ++i) {
        const auto yi = y[static_cast<std::size_t>(i)];
        if (yi < K - 1) resid(i, static_cast<Eigen::Index>(yi)) += 1.0;
      }
      grad->resize(static_cast<Eigen::Index>(num_free()));
      Eigen::Map<MatrixXd> gW(grad->data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(K - 1));
      gW = X.transpose() * resid / n;
      gW -= l2 * Eigen::Map<const MatrixXd>(theta.data(), static_cast<Eigen::Index>(d),
                                            static_cast<Eigen::Index>(K - 1));
      grad->tail(static_cast<Eigen::Index>(K - 1)) = resid.colwise().sum().transpose() / n;
    }
    return value;
  }

  // -Hessian of the objective, same packing as the gradient.
  MatrixXd negative_hessian(const VectorXd& theta) const {
    MatrixXd s = scores(theta);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double mx = s.row(i).maxCoeff();
      const double lse = mx + std::log((s.row(i).array() - mx).exp().sum());
      s.row(i) = (s.row(i).array() - lse).exp().matrix();
    }
    const auto n = X.rows();
    const auto D = static_cast<Eigen::Index>(d);
    const auto F = static_cast<Eigen::Index>(K - 1);
    MatrixXd Xt(n, D + 1);  // [x, 1]
    Xt.leftCols(D) = X;
    Xt.col(D).setOnes();
    MatrixXd H = MatrixXd::Zero(F * (D + 1), F * (D + 1));
    auto index = [&](Eigen::Index a, Eigen::Index j) { return j < D ? a * D + j : F * D + a; };
    MatrixXd weighted(n, D + 1);
    for (Eigen::Index a = 0; a < F; ++a) {
      for (Eigen::Index b = a; b < F; ++b) {
        VectorXd w = -s.col(a).cwiseProduct(s.col(b));
        if (a == b) w += s.col(a);
        weighted = Xt.array().colwise() * w.array();
        const MatrixXd block = Xt.transpose() * weighted / static_cast<double>(n);
        for (Eigen::Index j = 0; j <= D; ++j) {
          for (Eigen::Index k = 0; k <= D; ++k) {
            H(index(a, j), index(b, k)) = block(j, k);
            H(index(b, k), index(a, j)) = block(j, k);
          }
        }
      }
    }
    H.topLeftCorner(F * D, F * D).diagonal().array() += l2;
    return H;
  }
};

}  // namespace

PropensityModel fit_propensity(const Dataset& dataset, const PropensityFitOptions& options) {
  require_nonempty(dataset, "fit_propensity");
  if (options.l2 < 0.0) throw Error("fit_propensity: l2 must be nonnegative");
  const std::size_t d = dataset.dim();
  const std::size_t K = dataset.num_actions();
  if (K < 2) throw Error("fit_propensity: need at least two actions");

  std::vector<std::size_t> counts(K, 0);
  for (const auto& r : dataset) ++counts[r.action];
  for (std::size_t a = 0; a < K; ++a) {
    if (counts[a] == 0) {
      throw Error("fit_propensity: action " + std::to_string(a) + " never appears in the data");
    }
  }

  Problem prob;
  prob.d = d;
  prob.K = K;
  prob.l2 = options.l2;
  prob.X.resize(static_cast<Eigen::Index>(dataset.size()), static_cast<Eigen::Index>(d));
  prob.y.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) prob.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dataset[i].context[j];
    prob.y.push_back(dataset[i].action);
  }

  // Damped Newton ascent. The problem is small ((d + 1)(K - 1) parameters)
  // and badly conditioned when l2 is large, where first-order steps crawl.
  VectorXd theta = VectorXd::Zero(static_cast<Eigen::Index>(prob.num_free()));
  VectorXd grad;
  double value = prob.evaluate(theta, &grad);
  bool converged = grad.lpNorm<Eigen::Infinity>() < options.tol;
  std::size_t iter = 0;
  while (!converged && iter < options.max_iters) {
    ++iter;
    const MatrixXd curvature = prob.negative_hessian(theta);
    const VectorXd direction = curvature.ldlt().solve(grad);
    const double slope = grad.dot(direction);
    double step = 1.0;
    VectorXd candidate;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      candidate = theta + step * direction;
      const double cand_value = prob.evaluate(candidate, nullptr);
      if (std::isfinite(cand_value) && cand_value >= value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no ascent possible at machine precision
    theta = candidate;
    value = prob.evaluate(theta, &grad);
    converged = grad.lpNorm<Eigen::Infinity>() < options.tol;
  }

  PropensityModel model(d, K);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t a = 0; a + 1 < K; ++a) model.weights_[j * K + a] = theta(static_cast<Eigen::Index>(a * d + j));
  }
  for (std::size_t a = 0; a + 1 < K; ++a) model.intercepts_[a] = theta(static_cast<Eigen::Index>(d * (K - 1) + a));
  model.fitted_ = true;
  model.converged_ = converged;
  model.iterations_ = iter;
  model.gradient_norm_ = grad.lpNorm<Eigen::Infinity>();
  return model;
}

void to_json(nlohmann::json& j, const PropensityModel& m) {
  j = nlohmann::json{{"type", "multinomial_logistic"},
                     {"d", m.dim()},
                     {"K", m.num_actions()},
                     {"weights", m.weights()},
                     {"intercepts", m.intercepts()},
                     {"fitted", m.fitted()},
                     {"converged", m.converged()},
                     {"iterations", m.iterations()},
                     {"gradient_norm", m.gradient_norm()}};
}

void from_json(const nlohmann::json& j, PropensityModel& m) {
  PropensityModel out(j.at("d").get<std::size_t>(), j.at("K").get<std::size_t>());
  j.at("weights").get_to(out.weights_);
  j.at("intercepts").get_to(out.intercepts_);
  if (out.weights_.size() != out.dim_ * out.num_actions_ || out.intercepts_.size() != out.num_actions_) {
    throw Error("propensity JSON: inconsistent dimensions");
  }
  out.fitted_ = j.value("fitted", true);
  out.converged_ = j.value("converged", true);
  out.iterations_ = j.value("iterations", std::size_t{0});
  out.gradient_norm_ = j.value("gradient_norm", 0.0);
  m = std::move(out);
}

}  // namespace survope
