#include "survope/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "survope/estimators.hpp"
#include "survope/opl.hpp"

namespace survope {

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << str();
  if (!out) throw Error("write failed for " + path.string());
}

CsvTable CsvTable::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) {
        throw Error(path.string() + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw Error(path.string() + ": empty file");
  return t;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

EnvConfig env_config_for(const ExperimentConfig& config, SweepAxis axis, double value) {
  EnvConfig env = config.env;
  env.beta = axis == SweepAxis::kBeta ? value : config.defaults.beta;
  env.target_censoring_rate = axis == SweepAxis::kRho1 ? value : config.defaults.rho1;
  return env;
}

NuisanceBundle make_nuisance(const std::shared_ptr<const EnvParams>& env, const Dataset& dataset,
                             NuisanceMode mode, double weight_floor) {
  if (mode == NuisanceMode::kOracle) {
    return NuisanceBundle{logging_policy(*env), std::make_shared<TrueSurvivalModel>(env),
                          std::make_shared<TrueCensoringModel>(env), weight_floor};
  }
  NuisanceFitOptions options;
  options.fit_kaplan_meier = false;
  return fit_nuisance(dataset, options).bundle(weight_floor);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    bool failed = false;
    auto worker = [&] {
      while (true) {
        std::size_t i = 0;
        {
          std::lock_guard lock(mu);
          if (failed || next >= n) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          errors[i] = std::current_exception();
          failed = true;
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string trial_context(SweepAxis axis, double value, std::size_t trial, std::uint64_t seed) {
  return to_string(axis) + "=" + format_double(value) + ", trial " + std::to_string(trial) +
         ", seed " + std::to_string(seed);
}

/// Runs `body(trial, seed)` for every trial and reports failures with the
/// (sweep value, trial, seed) triple.
void run_trials(const ExperimentConfig& config, SweepAxis axis, double value,
                const std::function<void(std::size_t, std::uint64_t)>& body) {
  const std::size_t n = config.trials();
  parallel_for(n, config.threads, [&](std::size_t trial) {
    const std::uint64_t seed = config.base_seed + trial;
    try {
      body(trial, seed);
    } catch (const std::exception& e) {
      throw Error(trial_context(axis, value, trial, seed) + ": " + e.what());
    }
  });
}

std::uint64_t test_seed(const ExperimentConfig& config) { return config.base_seed + kTestSeedOffset; }

void log_line(std::ostream* log, const std::string& msg) {
  if (log != nullptr) *log << msg << '\n' << std::flush;
}

std::shared_ptr<const EnvParams> build_env(const ExperimentConfig& config, SweepAxis axis,
                                           double value) {
  return std::make_shared<const EnvParams>(
      make_env(config.env_seed, env_config_for(config, axis, value)));
}

std::size_t sample_size(const ExperimentConfig& config, double value) {
  return config.axis == SweepAxis::kN ? static_cast<std::size_t>(value) : config.defaults.n;
}

double epsilon_for(const ExperimentConfig& config, double value) {
  return config.axis == SweepAxis::kEpsilon ? value : config.defaults.epsilon;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(v.size() - 1));
  }
  return m;
}

void write_outputs(const ExperimentConfig& config, const CsvTable& table, const std::string& stem) {
  table.write(config.output_dir / (stem + ".csv"));
  std::ofstream cfg(config.output_dir / (stem + ".config.json"), std::ios::binary);
  cfg << experiment_config_to_json(config).dump(2) << '\n';
}

}  // namespace

MonteCarloValue cached_value(const std::filesystem::path& cache_dir, const nlohmann::json& key,
                             const std::function<MonteCarloValue()>& compute) {
  const std::string text = key.dump();
  const auto path = cache_dir / ("truth_" + hex(fnv1a(text)) + ".json");
  if (std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    nlohmann::json doc;
    try {
      in >> doc;
      if (doc.at("key") == key) {
        return {doc.at("value").get<double>(), doc.at("std_error").get<double>()};
      }
    } catch (const nlohmann::json::exception&) {
      // unreadable entry: recompute and overwrite
    }
  }
  const auto v = compute();
  std::filesystem::create_directories(cache_dir);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << nlohmann::json{{"key", key}, {"value", v.value}, {"std_error", v.std_error}}.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
  return v;
}

CsvTable run_ope_sweep(const ExperimentConfig& config, std::ostream* log) {
  if (config.mode != ExperimentMode::kOpe) throw ConfigError("run_ope_sweep needs mode = \"ope\"");
  config.validate();
  const auto grid = config.grid();
  const Target target = RmstTarget{grid.tau(), grid.num_points()};
  std::vector<Estimator> estimators;
  for (const auto& name : config.resolved_methods()) estimators.push_back(estimator_from_string(name));

  CsvTable table;
  table.header = {"axis", "axis_value", "estimator", "n", "rho1", "epsilon", "beta", "n_trials",
                  "truth", "truth_se", "mean", "mse", "squared_bias", "variance"};
  for (double value : config.resolved_sweep()) {
    const auto env = build_env(config, config.axis, value);
    const auto eval = make_eval_policy(*env, epsilon_for(config, value));
    const std::size_t n = sample_size(config, value);
    nlohmann::json key{{"kind", "policy_rmst"},
                       {"env", *env},
                       {"epsilon", epsilon_for(config, value)},
                       {"tau", grid.tau()},
                       {"grid_points", grid.num_points()},
                       {"n_test", config.test_size()},
                       {"seed", test_seed(config)}};
    const auto truth = cached_value(config.output_dir / "cache", key, [&] {
      return true_policy_value(*env, *eval, grid, config.test_size(), test_seed(config));
    });
    log_line(log, "ope " + to_string(config.axis) + "=" + format_double(value) +
                      ": truth " + format_double(truth.value));

    const std::size_t trials = config.trials();
    std::vector<std::vector<double>> values(estimators.size(), std::vector<double>(trials));
    run_trials(config, config.axis, value, [&](std::size_t trial, std::uint64_t seed) {
      const auto data = generate_dataset(*env, n, seed);
      const auto bundle = make_nuisance(env, data.dataset, config.nuisance, config.weight_floor);
      const auto reports = estimate_many(data.dataset, *eval, bundle, target, estimators);
      for (std::size_t e = 0; e < estimators.size(); ++e) values[e][trial] = reports[e].value;
    });
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const auto m = aggregate_trials(values[e], truth.value, to_string(estimators[e]));
      const auto env_cfg = env_config_for(config, config.axis, value);
      table.rows.push_back({to_string(config.axis), format_double(value), m.estimator,
                            std::to_string(n), format_double(env_cfg.target_censoring_rate),
                            format_double(epsilon_for(config, value)), format_double(env_cfg.beta),
                            std::to_string(m.n_trials), format_double(truth.value),
                            format_double(truth.std_error), format_double(m.mean),
                            format_double(m.mse), format_double(m.squared_bias),
                            format_double(m.variance)});
    }
  }
  write_outputs(config, table, "ope_" + to_string(config.axis));
  return table;
}

CsvTable run_opl_sweep(const ExperimentConfig& config, std::ostream* log) {
  if (config.mode != ExperimentMode::kOpl) throw ConfigError("run_opl_sweep needs mode = \"opl\"");
  config.validate();
  const auto grid = config.grid();
  const auto learners = config.resolved_methods();

  CsvTable table;
  table.header = {"axis", "axis_value", "learner", "n_trials", "ratio_mean", "ratio_std"};
  for (double value : config.resolved_sweep()) {
    const auto env = build_env(config, config.axis, value);
    const auto logging = logging_policy(*env);
    const std::size_t n = sample_size(config, value);
    const std::size_t trials = config.trials();
    std::vector<std::vector<double>> ratios(learners.size(), std::vector<double>(trials));
    run_trials(config, config.axis, value, [&](std::size_t trial, std::uint64_t seed) {
      const auto data = generate_dataset(*env, n, seed);
      const auto bundle = make_nuisance(env, data.dataset, config.nuisance, config.weight_floor);
      std::vector<std::shared_ptr<const Policy>> learned;
      for (const auto& name : learners) {
        if (name == "logging") {
          learned.push_back(logging);
        } else if (name == "regression") {
          learned.push_back(regression_learner(bundle.outcome, grid, env->num_actions,
                                               config.train.sense));
        } else {
          TrainConfig tc = config.train;
          tc.grid = grid;
          tc.estimator = estimator_from_string(name);
          tc.seed = seed;
          learned.push_back(std::make_shared<MlpPolicy>(train_policy(data.dataset, bundle, tc).policy));
        }
      }
      std::vector<const Policy*> policies;
      for (const auto& p : learned) policies.push_back(p.get());
      policies.push_back(logging.get());
      const auto v = true_policy_values(*env, policies, grid, config.test_size(), test_seed(config));
      for (std::size_t l = 0; l < learners.size(); ++l) ratios[l][trial] = v[l].value / v.back().value;
    });
    for (std::size_t l = 0; l < learners.size(); ++l) {
      const auto m = mean_std(ratios[l]);
      table.rows.push_back({to_string(config.axis), format_double(value), learners[l],
                            std::to_string(trials), format_double(m.mean), format_double(m.std)});
      log_line(log, "opl " + to_string(config.axis) + "=" + format_double(value) + " " + learners[l] +
                        ": ratio " + format_double(m.mean));
    }
  }
  write_outputs(config, table, "opl_" + to_string(config.axis));
  return table;
}

CsvTable run_constrained(const ExperimentConfig& config, std::ostream* log) {
  if (config.mode != ExperimentMode::kConstrained) {
    throw ConfigError("run_constrained needs mode = \"constrained\"");
  }
  config.validate();
  const auto grid = config.grid();
  const auto learners = config.resolved_methods();
  const auto env = std::make_shared<const EnvParams>(
      make_env(config.env_seed, env_config_for(config, SweepAxis::kN, 0.0)));
  const auto logging = logging_policy(*env);
  const double logging_cost = true_policy_cost(*env, *logging, config.test_size(), test_seed(config)).value;
  const double budget = config.budget_ratio * logging_cost;
  log_line(log, "constrained: logging cost " + format_double(logging_cost) + ", budget " +
                    format_double(budget));

  const std::size_t trials = config.trials();
  std::vector<std::vector<double>> rmst(learners.size(), std::vector<double>(trials));
  std::vector<std::vector<double>> cost(learners.size(), std::vector<double>(trials));
  std::vector<std::vector<double>> final_lambda(learners.size(), std::vector<double>(trials));
  run_trials(config, SweepAxis::kN, static_cast<double>(config.defaults.n),
             [&](std::size_t trial, std::uint64_t seed) {
               const auto data = generate_dataset(*env, config.defaults.n, seed, false, env->base_costs);
               const auto bundle = make_nuisance(env, data.dataset, config.nuisance, config.weight_floor);
               for (std::size_t l = 0; l < learners.size(); ++l) {
                 LagrangianConfig lc = config.lagrangian;
                 lc.grid = grid;
                 lc.budget = budget;
                 lc.estimator = estimator_from_string(learners[l]);
                 lc.seed = seed;
                 const auto result = train_constrained(data.dataset, bundle, lc);
                 rmst[l][trial] =
                     true_policy_value(*env, result.policy, grid, config.test_size(), test_seed(config)).value;
                 cost[l][trial] =
                     true_policy_cost(*env, result.policy, config.test_size(), test_seed(config)).value;
                 final_lambda[l][trial] = result.trace.back().lambda;
               }
             });

  CsvTable table;
  table.header = {"learner", "n_trials", "budget", "rmst_mean", "rmst_std", "cost_mean",
                  "cost_std", "feasible_rate", "final_lambda_mean"};
  for (std::size_t l = 0; l < learners.size(); ++l) {
    const auto r = mean_std(rmst[l]);
    const auto c = mean_std(cost[l]);
    const auto lam = mean_std(final_lambda[l]);
    const auto feasible = std::count_if(cost[l].begin(), cost[l].end(), [&](double v) { return v <= budget; });
    const double rate = static_cast<double>(feasible) / static_cast<double>(trials);
    table.rows.push_back({learners[l], std::to_string(trials), format_double(budget),
                          format_double(r.mean), format_double(r.std), format_double(c.mean),
                          format_double(c.std), format_double(rate), format_double(lam.mean)});
    log_line(log, "constrained " + learners[l] + ": rmst " + format_double(r.mean) + ", cost " +
                      format_double(c.mean) + ", feasible " + format_double(rate));
  }
  write_outputs(config, table, "constrained");
  return table;
}

}  // namespace survope
