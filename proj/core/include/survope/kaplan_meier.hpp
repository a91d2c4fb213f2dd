#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "survope/cox.hpp"
#include "survope/survival_model.hpp"
#include "survope/types.hpp"

namespace survope {

/// Right-continuous step function: value[k] holds on [times[k], times[k+1]).
struct StepCurve {
  std::vector<double> times;
  std::vector<double> values;

  double at(double t) const;  // 1 before the first jump
};

/// Per-action product-limit estimate; ignores the context.
class KaplanMeierCurve final : public SurvivalModel {
 public:
  KaplanMeierCurve() = default;
  KaplanMeierCurve(SurvivalTarget target, std::vector<StepCurve> curves);

  SurvivalTarget target() const { return target_; }
  std::size_t num_actions() const { return curves_.size(); }
  const StepCurve& curve_for(std::size_t action) const;

  double survival(std::span<const double> context, std::size_t action, double t) const override;

 private:
  SurvivalTarget target_ = SurvivalTarget::kEvent;
  std::vector<StepCurve> curves_;
};

/// S(t) = prod_{t_j <= t} (1 - d_j / n_j) per action. A stratum without records
/// (or without target events) yields S == 1.
KaplanMeierCurve fit_kaplan_meier(const Dataset& dataset, SurvivalTarget target);

void to_json(nlohmann::json& j, const KaplanMeierCurve& curve);
void from_json(const nlohmann::json& j, KaplanMeierCurve& curve);

}  // namespace survope
