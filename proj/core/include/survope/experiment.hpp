#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "survope/config.hpp"
#include "survope/nuisance.hpp"
#include "survope/synthenv.hpp"

namespace survope {

/// Rows of strings under a header, written as plain comma-separated text.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  std::string str() const;
  void write(const std::filesystem::path& path) const;
  static CsvTable read(const std::filesystem::path& path);
};

/// Shortest text that reads back to the same double.
std::string format_double(double value);

/// Environment for one sweep point: defaults with the swept factor replaced.
EnvConfig env_config_for(const ExperimentConfig& config, SweepAxis axis, double value);

/// Oracle bundle (logging policy, true S, true G) or nuisances fitted on `dataset`.
NuisanceBundle make_nuisance(const std::shared_ptr<const EnvParams>& env, const Dataset& dataset,
                             NuisanceMode mode, double weight_floor);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. If any call throws,
/// the error of the lowest failing index is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Monte Carlo value served from `<output_dir>/cache` when present, keyed by
/// a hash of `key`.
MonteCarloValue cached_value(const std::filesystem::path& cache_dir, const nlohmann::json& key,
                             const std::function<MonteCarloValue()>& compute);

/// One row per (sweep value, estimator) with truth, mean, MSE, squared bias and
/// variance of the RMST estimates. Writes `ope_<axis>.csv` to the output directory.
CsvTable run_ope_sweep(const ExperimentConfig& config, std::ostream* log = nullptr);

/// One row per (sweep value, learner) with the mean and standard deviation of
/// the improvement ratio. Writes `opl_<axis>.csv`.
CsvTable run_opl_sweep(const ExperimentConfig& config, std::ostream* log = nullptr);

/// One row per learner with true RMST, true cost and feasible rate at the
/// default factor levels. Writes `constrained.csv`.
CsvTable run_constrained(const ExperimentConfig& config, std::ostream* log = nullptr);

}  // namespace survope
