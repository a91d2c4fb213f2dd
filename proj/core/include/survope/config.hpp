#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "survope/opl.hpp"
#include "survope/synthenv.hpp"

namespace survope {

enum class ExperimentMode { kOpe, kOpl, kConstrained };
enum class NuisanceMode { kOracle, kFitted };
enum class SweepAxis { kN, kRho1, kEpsilon, kBeta };

std::string to_string(ExperimentMode mode);
std::string to_string(NuisanceMode mode);
std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& name);

/// Values used by default when sweeping an axis.
std::vector<double> default_sweep_values(SweepAxis axis);

/// Factor levels held fixed when they are not the swept axis.
struct FactorLevels {
  std::size_t n = 10'000;
  double rho1 = 0.3;
  double epsilon = 0.2;
  double beta = 1.0;
};

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::kOpe;
  EnvConfig env;
  std::uint64_t env_seed = 1;
  std::size_t grid_points = 100;
  FactorLevels defaults;
  SweepAxis axis = SweepAxis::kN;
  /// Empty means a single point at the default level of `axis`.
  std::vector<double> sweep_values;
  std::optional<std::size_t> n_trials;
  std::optional<std::size_t> n_test;
  /// Estimator names for OPE; learner names for OPL and constrained runs.
  std::vector<std::string> estimators;
  NuisanceMode nuisance = NuisanceMode::kFitted;
  double weight_floor = 0.02;
  std::filesystem::path output_dir = "results";
  std::uint64_t base_seed = 0;
  std::size_t threads = 1;
  bool paper_scale = false;

  TrainConfig train;
  LagrangianConfig lagrangian;
  double budget_ratio = 0.8;

  /// Resolved trial count: explicit value, else 10 (OPL/constrained) or 50
  /// (OPE) at desk scale and 100 at paper scale.
  std::size_t trials() const;
  /// Resolved test-context count: explicit value, else 50,000 at desk scale
  /// and 100,000 at paper scale.
  std::size_t test_size() const;
  /// The swept values, or the single default level when none are given.
  std::vector<double> resolved_sweep() const;
  /// Names of the configured estimators or learners, with mode defaults.
  std::vector<std::string> resolved_methods() const;
  TimeGrid grid() const { return TimeGrid(env.tau, grid_points); }

  void validate() const;
};

/// Offset separating test-context seeds from trial seeds.
inline constexpr std::uint64_t kTestSeedOffset = 1'000'000;

/// Parses a TOML or JSON document (chosen by extension, JSON for ".json").
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& config);

/// Reads the TOML subset used by config files into JSON: tables, dotted
/// tables, strings, integers, floats, booleans and (nested) arrays.
nlohmann::json parse_toml(std::string_view text, const std::string& source = "<string>");

}  // namespace survope
