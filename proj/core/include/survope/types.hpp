#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace survope {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration (bad config file, bad flag value). The CLI maps
/// this to exit code 1; every other Error maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// One logged observation (x, a, T, r[, c]).
struct LoggedRecord {
  std::vector<double> context;
  std::size_t action = 0;
  double observed_time = 0.0;
  bool event = false;            // true: event observed, false: censored
  std::optional<double> cost;    // only used by constrained learning

  bool operator==(const LoggedRecord&) const = default;
};

/// Ordered collection of records sharing one context dimension and action space.
class Dataset {
 public:
  Dataset(std::size_t dim, std::size_t num_actions);
  Dataset(std::size_t dim, std::size_t num_actions, std::vector<LoggedRecord> records);

  /// Validates the record against the dataset invariants; throws Error otherwise.
  void push_back(LoggedRecord record);
  void reserve(std::size_t n) { records_.reserve(n); }

  std::size_t dim() const { return dim_; }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const LoggedRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<LoggedRecord>& records() const { return records_; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  /// True when every record carries a cost (and the dataset is nonempty).
  bool has_costs() const;

  /// Copy of the records at the given indices, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const Dataset&) const = default;

 private:
  void validate(const LoggedRecord& record) const;

  std::size_t dim_;
  std::size_t num_actions_;
  std::vector<LoggedRecord> records_;
};

/// Throws Error if the dataset is empty; `what` names the calling operation.
void require_nonempty(const Dataset& dataset, const char* what);

/// Equally spaced grid t_j = j * tau / M for j = 1..M, with the origin t_0 = 0
/// prepended for trapezoidal integration.
class TimeGrid {
 public:
  explicit TimeGrid(double tau, std::size_t num_points = 100);

  double tau() const { return tau_; }
  std::size_t num_points() const { return num_points_; }
  double spacing() const { return tau_ / static_cast<double>(num_points_); }

  /// t_j for j in [0, M]; point(0) == 0 and point(M) == tau.
  double point(std::size_t j) const;

  /// The M + 1 points t_0 = 0, t_1, ..., t_M.
  std::vector<double> points_with_origin() const;

  /// Trapezoid weights matching points_with_origin().
  std::vector<double> trapezoid_weights() const;

  /// Trapezoid integral of values sampled at points_with_origin().
  double integrate(std::span<const double> values) const;

 private:
  double tau_;
  std::size_t num_points_;
};

}  // namespace survope
