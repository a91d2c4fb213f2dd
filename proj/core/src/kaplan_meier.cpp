#include "survope/kaplan_meier.hpp"

#include <algorithm>
#include <map>

namespace survope {

double StepCurve::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

KaplanMeierCurve::KaplanMeierCurve(SurvivalTarget target, std::vector<StepCurve> curves)
    : target_(target), curves_(std::move(curves)) {}

const StepCurve& KaplanMeierCurve::curve_for(std::size_t action) const {
  if (action >= curves_.size()) throw Error("kaplan-meier: unknown action " + std::to_string(action));
  return curves_[action];
}

double KaplanMeierCurve::survival(std::span<const double>, std::size_t action, double t) const {
  if (t <= 0.0) return 1.0;
  return curve_for(action).at(t);
}

KaplanMeierCurve fit_kaplan_meier(const Dataset& dataset, SurvivalTarget target) {
  require_nonempty(dataset, "fit_kaplan_meier");
  std::vector<StepCurve> curves(dataset.num_actions());
  for (std::size_t a = 0; a < dataset.num_actions(); ++a) {
    // time -> (records leaving at this time, target events at this time)
    std::map<double, std::pair<std::size_t, std::size_t>> table;
    std::size_t at_risk = 0;
    for (const auto& r : dataset) {
      if (r.action != a) continue;
      ++at_risk;
      auto& cell = table[r.observed_time];
      ++cell.first;
      const bool hit = target == SurvivalTarget::kEvent ? r.event : !r.event;
      cell.second += hit ? 1 : 0;
    }
    double s = 1.0;
    for (const auto& [t, cell] : table) {
      if (cell.second > 0) {
        s *= 1.0 - static_cast<double>(cell.second) / static_cast<double>(at_risk);
        curves[a].times.push_back(t);
        curves[a].values.push_back(s);
      }
      at_risk -= cell.first;
    }
  }
  return KaplanMeierCurve(target, std::move(curves));
}

void to_json(nlohmann::json& j, const KaplanMeierCurve& km) {
  nlohmann::json curves = nlohmann::json::array();
  for (std::size_t a = 0; a < km.num_actions(); ++a) {
    curves.push_back({{"times", km.curve_for(a).times}, {"values", km.curve_for(a).values}});
  }
  j = nlohmann::json{{"type", "kaplan_meier"}, {"target", to_string(km.target())}, {"curves", curves}};
}

void from_json(const nlohmann::json& j, KaplanMeierCurve& km) {
  std::vector<StepCurve> curves;
  for (const auto& jc : j.at("curves")) {
    StepCurve c;
    jc.at("times").get_to(c.times);
    jc.at("values").get_to(c.values);
    if (c.times.size() != c.values.size()) throw Error("kaplan-meier JSON: inconsistent curve");
    curves.push_back(std::move(c));
  }
  km = KaplanMeierCurve(survival_target_from_string(j.at("target").get<std::string>()), std::move(curves));
}

}  // namespace survope
