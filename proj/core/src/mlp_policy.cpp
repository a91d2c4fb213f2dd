#include "survope/mlp_policy.hpp"

#include <cmath>

#include "survope/types.hpp"

namespace survope {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void softmax_columns(Eigen::MatrixXd& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

}  // namespace

MlpPolicy::MlpPolicy(std::size_t dim, std::size_t num_actions, std::vector<std::size_t> hidden) {
  if (dim == 0) throw Error("MlpPolicy: dim must be at least 1");
  if (num_actions < 2) throw Error("MlpPolicy: need at least two actions");
  layer_sizes_.push_back(dim);
  for (auto h : hidden) {
    if (h == 0) throw Error("MlpPolicy: hidden layer width must be at least 1");
    layer_sizes_.push_back(h);
  }
  layer_sizes_.push_back(num_actions);
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += layer_sizes_[l + 1] * layer_sizes_[l] + layer_sizes_[l + 1];
  }
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
}

MlpPolicy MlpPolicy::xavier(std::size_t dim, std::size_t num_actions, Rng& rng,
                            std::vector<std::size_t> hidden) {
  MlpPolicy p(dim, num_actions, std::move(hidden));
  for (std::size_t l = 0; l + 1 < p.layer_sizes_.size(); ++l) {
    const std::size_t in = p.layer_sizes_[l];
    const std::size_t out = p.layer_sizes_[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (std::size_t k = 0; k < in * out; ++k) {
      p.params_[static_cast<Eigen::Index>(p.offsets_[l] + k)] = rng.uniform(-bound, bound);
    }
  }
  return p;
}

void MlpPolicy::set_parameters(const Eigen::VectorXd& params) {
  if (params.size() != params_.size()) throw Error("MlpPolicy: parameter vector has wrong size");
  params_ = params;
}

MlpPolicy::Forward MlpPolicy::forward(const Eigen::MatrixXd& contexts) const {
  if (static_cast<std::size_t>(contexts.rows()) != dim()) {
    throw Error("MlpPolicy: context dimension mismatch");
  }
  Forward fwd;
  fwd.activations.reserve(layer_sizes_.size());
  fwd.activations.push_back(contexts);
  const std::size_t layers = layer_sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = static_cast<Eigen::Index>(layer_sizes_[l]);
    const auto out = static_cast<Eigen::Index>(layer_sizes_[l + 1]);
    const auto off = static_cast<Eigen::Index>(offsets_[l]);
    Eigen::Map<const RowMajor> w(params_.data() + off, out, in);
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + off + out * in, out);
    Eigen::MatrixXd z = w * fwd.activations.back();
    z.colwise() += b;
    if (l + 1 < layers) {
      z = z.cwiseMax(0.0);
    } else {
      softmax_columns(z);
    }
    fwd.activations.push_back(std::move(z));
  }
  return fwd;
}

Eigen::VectorXd MlpPolicy::backward(const Forward& fwd, const Eigen::MatrixXd& logit_grad) const {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd g = logit_grad;
  for (std::size_t l = layer_sizes_.size() - 1; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(layer_sizes_[l]);
    const auto out = static_cast<Eigen::Index>(layer_sizes_[l + 1]);
    const auto off = static_cast<Eigen::Index>(offsets_[l]);
    const Eigen::MatrixXd& prev = fwd.activations[l];
    Eigen::Map<RowMajor> dw(grad.data() + off, out, in);
    dw = g * prev.transpose();
    grad.segment(off + out * in, out) = g.rowwise().sum();
    if (l > 0) {
      Eigen::Map<const RowMajor> w(params_.data() + off, out, in);
      Eigen::MatrixXd next = w.transpose() * g;
      g = (prev.array() > 0.0).select(next, 0.0);
    }
  }
  return grad;
}

void MlpPolicy::probs_into(std::span<const double> context, std::span<double> out) const {
  if (out.size() != num_actions()) throw Error("MlpPolicy: output span has wrong size");
  const Eigen::Map<const Eigen::VectorXd> x(context.data(), static_cast<Eigen::Index>(context.size()));
  const auto fwd = forward(Eigen::MatrixXd(x));
  const auto& p = fwd.activations.back();
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = p(static_cast<Eigen::Index>(a), 0);
}

Eigen::VectorXd MlpPolicy::log_prob_gradient(std::span<const double> context,
                                             std::size_t action) const {
  if (action >= num_actions()) throw Error("MlpPolicy: action out of range");
  const Eigen::Map<const Eigen::VectorXd> x(context.data(), static_cast<Eigen::Index>(context.size()));
  const auto fwd = forward(Eigen::MatrixXd(x));
  Eigen::MatrixXd dz = -fwd.activations.back();
  dz(static_cast<Eigen::Index>(action), 0) += 1.0;
  return backward(fwd, dz);
}

Eigen::MatrixXd MlpPolicy::batch_probs(const Eigen::MatrixXd& contexts) const {
  return forward(contexts).activations.back();
}

Eigen::VectorXd MlpPolicy::linear_objective_gradient(const Eigen::MatrixXd& contexts,
                                                     const Eigen::MatrixXd& coeffs,
                                                     double* objective) const {
  const auto fwd = forward(contexts);
  const Eigen::MatrixXd& p = fwd.activations.back();
  if (coeffs.rows() != p.rows() || coeffs.cols() != p.cols()) {
    throw Error("MlpPolicy: coefficient matrix has wrong shape");
  }
  const Eigen::MatrixXd pc = p.cwiseProduct(coeffs);
  if (objective != nullptr) *objective = pc.sum();
  const Eigen::RowVectorXd expected = pc.colwise().sum();
  Eigen::MatrixXd dz = coeffs;
  dz.rowwise() -= expected;
  dz = dz.cwiseProduct(p);
  return backward(fwd, dz);
}

void to_json(nlohmann::json& j, const MlpPolicy& policy) {
  const auto& p = policy.parameters();
  j = nlohmann::json{{"type", "mlp"},
                     {"layer_sizes", policy.layer_sizes()},
                     {"parameters", std::vector<double>(p.data(), p.data() + p.size())}};
}

MlpPolicy mlp_policy_from_json(const nlohmann::json& j) {
  if (j.value("type", std::string{}) != "mlp") throw Error("policy JSON: expected type \"mlp\"");
  const auto sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  if (sizes.size() < 2) throw Error("policy JSON: layer_sizes needs at least two entries");
  std::vector<std::size_t> hidden(sizes.begin() + 1, sizes.end() - 1);
  MlpPolicy policy(sizes.front(), sizes.back(), hidden);
  const auto values = j.at("parameters").get<std::vector<double>>();
  if (values.size() != policy.num_parameters()) {
    throw Error("policy JSON: expected " + std::to_string(policy.num_parameters()) +
                " parameters, found " + std::to_string(values.size()));
  }
  policy.set_parameters(Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                          static_cast<Eigen::Index>(values.size())));
  return policy;
}

}  // namespace survope
