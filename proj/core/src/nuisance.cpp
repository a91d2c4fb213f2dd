#include "survope/nuisance.hpp"

#include <algorithm>
#include <fstream>

namespace survope {

void SurvivalModel::curve(std::span<const double> context, std::size_t action,
                          std::span<const double> times, std::span<double> out) const {
  for (std::size_t j = 0; j < times.size(); ++j) out[j] = survival(context, action, times[j]);
}

double clamp_censoring_weight(double g, double floor) {
  if (!(floor >= 0.0 && floor < 1.0)) throw Error("clamp_censoring_weight: floor must lie in [0, 1)");
  return std::max(g, floor);
}

NuisanceBundle FittedNuisance::bundle(double weight_floor) const {
  return NuisanceBundle{propensity, outcome, censoring, weight_floor};
}

FittedNuisance fit_nuisance(const Dataset& dataset, const NuisanceFitOptions& options) {
  FittedNuisance out;
  out.propensity = std::make_shared<PropensityModel>(fit_propensity(dataset, options.propensity));
  out.outcome = std::make_shared<CoxModel>(fit_cox(dataset, SurvivalTarget::kEvent, options.cox));
  out.censoring = std::make_shared<CoxModel>(fit_cox(dataset, SurvivalTarget::kCensoring, options.cox));
  if (options.fit_kaplan_meier) {
    out.censoring_km = std::make_shared<KaplanMeierCurve>(
        fit_kaplan_meier(dataset, SurvivalTarget::kCensoring));
  }
  return out;
}

nlohmann::json nuisance_to_json(const FittedNuisance& n) {
  nlohmann::json j;
  std::vector<std::string> warnings;
  if (n.propensity) {
    j["propensity"] = *n.propensity;
    if (!n.propensity->converged()) warnings.push_back("propensity: did not converge");
  }
  if (n.outcome) {
    j["outcome"] = *n.outcome;
    for (auto& w : n.outcome->warnings()) warnings.push_back(std::move(w));
  }
  if (n.censoring) {
    j["censoring"] = *n.censoring;
    for (auto& w : n.censoring->warnings()) warnings.push_back(std::move(w));
  }
  if (n.censoring_km) j["censoring_km"] = *n.censoring_km;
  j["metadata"] = {{"warnings", warnings}};
  return j;
}

FittedNuisance nuisance_from_json(const nlohmann::json& j) {
  FittedNuisance out;
  if (j.contains("propensity")) {
    PropensityModel m(0, 1);
    from_json(j.at("propensity"), m);
    out.propensity = std::make_shared<PropensityModel>(std::move(m));
  }
  if (j.contains("outcome")) {
    CoxModel m;
    from_json(j.at("outcome"), m);
    out.outcome = std::make_shared<CoxModel>(std::move(m));
  }
  if (j.contains("censoring")) {
    CoxModel m;
    from_json(j.at("censoring"), m);
    out.censoring = std::make_shared<CoxModel>(std::move(m));
  }
  if (j.contains("censoring_km")) {
    KaplanMeierCurve km;
    from_json(j.at("censoring_km"), km);
    out.censoring_km = std::make_shared<KaplanMeierCurve>(std::move(km));
  }
  return out;
}

void save_nuisance_json(const FittedNuisance& nuisance, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << nuisance_to_json(nuisance).dump(2) << '\n';
}

FittedNuisance load_nuisance_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open nuisance file " + path.string());
  try {
    return nuisance_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace survope
