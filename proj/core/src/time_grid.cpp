#include <cmath>

#include "survope/types.hpp"

namespace survope {

TimeGrid::TimeGrid(double tau, std::size_t num_points) : tau_(tau), num_points_(num_points) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("time grid: tau must be positive");
  if (num_points == 0) throw Error("time grid: need at least one point");
}

double TimeGrid::point(std::size_t j) const {
  if (j >= num_points_) return tau_;
  return tau_ * static_cast<double>(j) / static_cast<double>(num_points_);
}

std::vector<double> TimeGrid::points_with_origin() const {
  std::vector<double> pts(num_points_ + 1);
  for (std::size_t j = 0; j <= num_points_; ++j) pts[j] = point(j);
  return pts;
}

std::vector<double> TimeGrid::trapezoid_weights() const {
  std::vector<double> w(num_points_ + 1, spacing());
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}

double TimeGrid::integrate(std::span<const double> values) const {
  if (values.size() != num_points_ + 1) {
    throw Error("time grid: expected " + std::to_string(num_points_ + 1) + " values");
  }
  double interior = 0.0;
  for (std::size_t j = 1; j < num_points_; ++j) interior += values[j];
  return spacing() * (0.5 * (values.front() + values.back()) + interior);
}

}  // namespace survope
