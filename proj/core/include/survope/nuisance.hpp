#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include <nlohmann/json.hpp>

#include "survope/cox.hpp"
#include "survope/kaplan_meier.hpp"
#include "survope/policy.hpp"
#include "survope/propensity.hpp"
#include "survope/survival_model.hpp"

namespace survope {

inline constexpr double kDefaultWeightFloor = 0.02;

/// max(g, floor). floor = 0 leaves g untouched.
double clamp_censoring_weight(double g, double floor = kDefaultWeightFloor);

/// The three nuisance sources consumed by the estimators. Any of them may be
/// an oracle (true policy / true curves) or a fitted model.
struct NuisanceBundle {
  std::shared_ptr<const Policy> propensity;
  std::shared_ptr<const SurvivalModel> outcome;
  std::shared_ptr<const SurvivalModel> censoring;
  double weight_floor = kDefaultWeightFloor;
};

/// Every model fitted from one logged dataset.
struct FittedNuisance {
  std::shared_ptr<const PropensityModel> propensity;
  std::shared_ptr<const CoxModel> outcome;
  std::shared_ptr<const CoxModel> censoring;
  std::shared_ptr<const KaplanMeierCurve> censoring_km;

  NuisanceBundle bundle(double weight_floor = kDefaultWeightFloor) const;
};

struct NuisanceFitOptions {
  PropensityFitOptions propensity;
  CoxFitOptions cox;
  bool fit_kaplan_meier = true;
};

FittedNuisance fit_nuisance(const Dataset& dataset, const NuisanceFitOptions& options = {});

/// JSON document with coefficients, baselines and fit metadata.
nlohmann::json nuisance_to_json(const FittedNuisance& nuisance);
FittedNuisance nuisance_from_json(const nlohmann::json& j);
void save_nuisance_json(const FittedNuisance& nuisance, const std::filesystem::path& path);
FittedNuisance load_nuisance_json(const std::filesystem::path& path);

}  // namespace survope
