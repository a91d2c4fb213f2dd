#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "survope/survival_model.hpp"
#include "survope/types.hpp"

namespace survope {

/// Which indicator a survival fit treats as the "event".
enum class SurvivalTarget {
  kEvent,      // r = 1: outcome model S(x, a, t)
  kCensoring,  // r = 0: censoring model G(t | x, a)
};

struct CoxFitOptions {
  double l2 = 1e-4;
  std::size_t max_iters = 100;
  double tol = 1e-10;
};

/// One action's proportional-hazards fit.
struct CoxStratum {
  std::vector<double> coefficients;
  std::vector<double> event_times;        // distinct, ascending
  std::vector<double> cumulative_hazard;  // Breslow H0 at each event time
  std::size_t num_records = 0;
  std::size_t num_target_events = 0;
  std::size_t iterations = 0;
  bool converged = false;
  bool degenerate = false;                // no target events: S == 1
  std::vector<double> objective_trace;    // penalized objective per Newton iterate

  double baseline_cumulative_hazard(double t) const;
};

/// Cox proportional hazards, one independent model per action.
/// S(t | x) = exp(-H0(t) exp(x^T beta)).
class CoxModel final : public SurvivalModel {
 public:
  CoxModel() = default;
  CoxModel(std::size_t dim, SurvivalTarget target, double l2, std::vector<CoxStratum> strata);

  std::size_t dim() const { return dim_; }
  std::size_t num_actions() const { return strata_.size(); }
  SurvivalTarget target() const { return target_; }
  double l2() const { return l2_; }
  const CoxStratum& stratum(std::size_t action) const;
  const std::vector<CoxStratum>& strata() const { return strata_; }

  /// Human-readable notes, e.g. degenerate strata.
  std::vector<std::string> warnings() const;

  double survival(std::span<const double> context, std::size_t action, double t) const override;
  void curve(std::span<const double> context, std::size_t action, std::span<const double> times,
             std::span<double> out) const override;

 private:
  std::size_t dim_ = 0;
  SurvivalTarget target_ = SurvivalTarget::kEvent;
  double l2_ = 0.0;
  std::vector<CoxStratum> strata_;
};

/// Per action: Newton iterations with step halving on the ridge-penalized
/// Breslow partial likelihood (mean log partial likelihood - l2/2 ||beta||^2),
/// started at zero, followed by the Breslow baseline hazard.
CoxModel fit_cox(const Dataset& dataset, SurvivalTarget target, const CoxFitOptions& options = {});

/// The penalized objective maximized by fit_cox for one action's stratum.
double cox_penalized_objective(const Dataset& dataset, std::size_t action, SurvivalTarget target,
                               std::span<const double> coefficients, double l2);

/// Same as CoxModel::survival but with a descriptive error for bad actions.
double predict_survival(const CoxModel& model, std::span<const double> context,
                        std::size_t action, double t);

void to_json(nlohmann::json& j, const CoxModel& model);
void from_json(const nlohmann::json& j, CoxModel& model);

std::string to_string(SurvivalTarget target);
SurvivalTarget survival_target_from_string(const std::string& name);

}  // namespace survope
