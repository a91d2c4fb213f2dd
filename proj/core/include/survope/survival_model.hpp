#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace survope {

/// Evaluation contract shared by fitted and oracle survival curves:
/// (context, action, t) -> P(time > t | context, action).
class SurvivalModel {
 public:
  virtual ~SurvivalModel() = default;

  virtual double survival(std::span<const double> context, std::size_t action,
                          double t) const = 0;

  /// Batch evaluation over ascending times. The default loops over survival();
  /// implementations override it to hoist per-(context, action) work.
  virtual void curve(std::span<const double> context, std::size_t action,
                     std::span<const double> times, std::span<double> out) const;
};

/// S(t) = value for every t > 0 and S(0) = value as well; used to plant
/// deliberately wrong outcome models (e.g. 0.5) or the trivial curves 0 and 1.
class ConstantSurvival final : public SurvivalModel {
 public:
  explicit ConstantSurvival(double value) : value_(value) {}
  double survival(std::span<const double>, std::size_t, double) const override { return value_; }

 private:
  double value_;
};

/// Wraps an arbitrary callable; handy for toy environments in tests.
class FunctionSurvival final : public SurvivalModel {
 public:
  using Fn = std::function<double(std::span<const double>, std::size_t, double)>;
  explicit FunctionSurvival(Fn fn) : fn_(std::move(fn)) {}
  double survival(std::span<const double> context, std::size_t action, double t) const override {
    return fn_(context, action, t);
  }

 private:
  Fn fn_;
};

}  // namespace survope
