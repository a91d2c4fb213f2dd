// survope command-line interface.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "survope/config.hpp"
#include "survope/dataset_io.hpp"
#include "survope/estimators.hpp"
#include "survope/experiment.hpp"
#include "survope/nuisance.hpp"
#include "survope/opl.hpp"
#include "survope/report.hpp"
#include "survope/synthenv.hpp"

namespace fs = std::filesystem;
using namespace survope;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "results";
  std::size_t threads = 1;
  bool paper_scale = false;
};

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw Error("cannot write " + path.string());
}

EnvParams load_env(const fs::path& path) { return read_json(path).get<EnvParams>(); }

ExperimentConfig experiment_config(const Globals& g, ExperimentMode mode) {
  ExperimentConfig c;
  if (!g.config.empty()) {
    c = load_experiment_config(g.config);
    if (c.mode != mode) {
      throw ConfigError(g.config + ": mode is '" + to_string(c.mode) + "' but the subcommand runs '" +
                        to_string(mode) + "'");
    }
  } else {
    c.mode = mode;
  }
  if (g.seed) c.base_seed = *g.seed;
  c.output_dir = g.out;
  c.threads = g.threads;
  c.paper_scale = c.paper_scale || g.paper_scale;
  c.validate();
  return c;
}

Target parse_target(const std::string& spec, double tau, std::size_t grid_points) {
  if (spec == "rmst") return RmstTarget{tau, grid_points};
  try {
    std::size_t used = 0;
    const double t = std::stod(spec, &used);
    if (used != spec.size() || !(t >= 0.0)) throw std::invalid_argument(spec);
    return PointTarget{t};
  } catch (const std::logic_error&) {
    throw ConfigError("--target must be 'rmst' or a nonnegative time, got '" + spec + "'");
  }
}

NuisanceBundle bundle_from_args(const std::string& nuisance_path, const std::string& env_path,
                                const Dataset& data, double floor) {
  if (!nuisance_path.empty()) return load_nuisance_json(nuisance_path).bundle(floor);
  if (!env_path.empty()) {
    auto env = std::make_shared<const EnvParams>(load_env(env_path));
    return make_nuisance(env, data, NuisanceMode::kOracle, floor);
  }
  throw ConfigError("give --nuisance (fitted models) or --env (oracle nuisances)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Censoring-aware off-policy evaluation and learning"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment config (TOML or JSON)");
  app.add_option("--seed", g.seed, "Base seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for independent trials")->capture_default_str();
  app.add_flag("--paper-scale", g.paper_scale, "100 trials and 100,000 test contexts");

  // generate
  auto* gen = app.add_subcommand("generate", "Sample a logged dataset from the synthetic environment");
  std::size_t gen_n = 10000;
  double gen_rho1 = 0.3;
  double gen_beta = 1.0;
  std::uint64_t env_seed = 1;
  bool gen_costs = false;
  std::string env_in;
  gen->add_option("-n,--n", gen_n, "Number of records")->capture_default_str();
  gen->add_option("--rho1", gen_rho1, "Target censoring rate")->capture_default_str();
  gen->add_option("--beta", gen_beta, "Logging policy inverse temperature")->capture_default_str();
  gen->add_option("--env-seed", env_seed, "Environment seed")->capture_default_str();
  gen->add_option("--env", env_in, "Reuse an existing env.json instead of building one");
  gen->add_flag("--costs", gen_costs, "Attach per-record costs");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit propensity, outcome and censoring models");
  std::string data_path;
  fit->add_option("--data", data_path, "Dataset CSV")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Estimate the value of a policy");
  std::string nuisance_path;
  std::string env_path;
  std::string policy_path;
  std::string target_spec = "rmst";
  double epsilon = 0.2;
  double floor = kDefaultWeightFloor;
  std::vector<std::string> estimator_names;
  eval->add_option("--data", data_path, "Dataset CSV")->required();
  eval->add_option("--nuisance", nuisance_path, "Fitted nuisance JSON");
  eval->add_option("--env", env_path, "env.json: oracle nuisances and the epsilon-greedy policy");
  eval->add_option("--policy", policy_path, "Learned policy JSON (instead of epsilon-greedy)");
  eval->add_option("--epsilon", epsilon, "Exploration of the evaluation policy")->capture_default_str();
  eval->add_option("--target", target_spec, "'rmst' or a time t")->capture_default_str();
  eval->add_option("--weight-floor", floor, "Clamp for censoring weights")->capture_default_str();
  eval->add_option("--estimators", estimator_names, "Subset of dm, ips, dr, ipcw_ips, ipcw_dr");

  // learn
  auto* learn = app.add_subcommand("learn", "Train an MLP policy on logged data");
  TrainConfig train;
  std::string learn_estimator = "ipcw_dr";
  learn->add_option("--data", data_path, "Dataset CSV")->required();
  learn->add_option("--nuisance", nuisance_path, "Fitted nuisance JSON");
  learn->add_option("--env", env_path, "env.json: oracle nuisances and the improvement ratio");
  learn->add_option("--estimator", learn_estimator, "Objective estimator")->capture_default_str();
  learn->add_option("--lr", train.learning_rate, "Adam learning rate")->capture_default_str();
  learn->add_option("--batch-size", train.batch_size, "Minibatch size")->capture_default_str();
  learn->add_option("--max-epochs", train.max_epochs, "Epoch limit")->capture_default_str();
  learn->add_option("--patience", train.patience, "Early-stopping patience")->capture_default_str();
  learn->add_option("--weight-floor", floor, "Clamp for censoring weights")->capture_default_str();
  learn->add_flag("--minimize", "Minimize survival instead of maximizing it");

  auto* sweep_ope = app.add_subcommand("sweep-ope", "Estimator MSE, bias and variance over a factor sweep");
  auto* sweep_opl = app.add_subcommand("sweep-opl", "Improvement ratio of learners over a factor sweep");
  auto* constrained = app.add_subcommand("constrained", "Budget-constrained learning");

  auto* report = app.add_subcommand("report", "Tidy CSVs and a text summary from sweep results");
  std::string results_dir;
  report->add_option("--results", results_dir, "Results directory (defaults to --out)");


  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const fs::path out = g.out;
    if (*gen) {
      EnvParams env;
      if (!env_in.empty()) {
        env = load_env(env_in);
      } else {
        EnvConfig cfg;
        cfg.beta = gen_beta;
        cfg.target_censoring_rate = gen_rho1;
        env = make_env(env_seed, cfg);
      }
      const std::uint64_t seed = g.seed.value_or(0);
      std::optional<std::vector<double>> costs;
      if (gen_costs) costs = env.base_costs;
      const auto data = generate_dataset(env, gen_n, seed, false, costs);
      fs::create_directories(out);
      save_dataset_csv(data.dataset, out / "dataset.csv");
      write_json(out / "env.json", env);
      std::cout << "wrote " << (out / "dataset.csv").string() << " (" << gen_n << " records, censoring rate "
                << env.calibrated_censoring_rate << ") and " << (out / "env.json").string() << '\n';
    } else if (*fit) {
      const auto data = load_dataset_csv(data_path);
      const auto fitted = fit_nuisance(data);
      fs::create_directories(out);
      save_nuisance_json(fitted, out / "nuisance.json");
      for (const auto* m : {fitted.outcome.get(), fitted.censoring.get()}) {
        for (const auto& w : m->warnings()) std::cerr << "warning: " << w << '\n';
      }
      std::cout << "wrote " << (out / "nuisance.json").string() << '\n';
    } else if (*eval) {
      const auto data = load_dataset_csv(data_path);
      const auto bundle = bundle_from_args(nuisance_path, env_path, data, floor);
      std::shared_ptr<const Policy> policy;
      double tau = 2.0;
      if (!env_path.empty()) tau = load_env(env_path).tau;
      if (!policy_path.empty()) {
        policy = std::make_shared<MlpPolicy>(mlp_policy_from_json(read_json(policy_path)));
      } else if (!env_path.empty()) {
        policy = make_eval_policy(load_env(env_path), epsilon);
      } else {
        throw ConfigError("give --policy or --env to define the evaluation policy");
      }
      std::vector<Estimator> which;
      for (const auto& name : estimator_names) which.push_back(estimator_from_string(name));
      if (which.empty()) {
        if (bundle.outcome) which.push_back(Estimator::kDM);
        which.insert(which.end(), {Estimator::kIPS, Estimator::kIpcwIPS});
        if (bundle.outcome) which.insert(which.end(), {Estimator::kDR, Estimator::kIpcwDR});
      }
      const auto reports = estimate_many(data, *policy, bundle, parse_target(target_spec, tau, 100), which);
      CsvTable table;
      table.header = {"estimator", "target", "value", "clamp_count"};
      std::cout << estimate_csv_header() << '\n';
      for (const auto& r : reports) {
        std::cout << estimate_csv_row(r) << '\n';
        table.rows.push_back({to_string(r.estimator), describe(r.target), format_double(r.value),
                              std::to_string(r.clamp_count)});
      }
      table.write(out / "estimates.csv");
    } else if (*learn) {
      const auto data = load_dataset_csv(data_path);
      const auto bundle = bundle_from_args(nuisance_path, env_path, data, floor);
      train.estimator = estimator_from_string(learn_estimator);
      train.seed = g.seed.value_or(0);
      if (learn->count("--minimize") > 0) train.sense = ObjectiveSense::kMinimize;
      std::optional<EnvParams> env;
      if (!env_path.empty()) {
        env = load_env(env_path);
        train.grid = TimeGrid(env->tau, 100);
      }
      const auto result = train_policy(data, bundle, train);
      nlohmann::json meta{{"estimator", learn_estimator},
                          {"learning_rate", train.learning_rate},
                          {"batch_size", train.batch_size},
                          {"max_epochs", train.max_epochs},
                          {"patience", train.patience},
                          {"seed", train.seed},
                          {"best_epoch", result.best_epoch},
                          {"epochs_run", result.epochs_run},
                          {"best_validation", result.best_validation}};
      if (env) {
        const double ratio = evaluate_improvement(*env, result.policy, train.grid, 50'000,
                                                  train.seed + kTestSeedOffset);
        meta["improvement_ratio"] = ratio;
        std::cout << "improvement ratio " << ratio << '\n';
      }
      write_json(out / "policy.json", policy_document(result.policy, meta));
      std::cout << "best validation " << result.best_validation << " at epoch " << result.best_epoch
                << "; wrote " << (out / "policy.json").string() << '\n';
    } else if (*sweep_ope) {
      run_ope_sweep(experiment_config(g, ExperimentMode::kOpe), &std::cerr);
    } else if (*sweep_opl) {
      run_opl_sweep(experiment_config(g, ExperimentMode::kOpl), &std::cerr);
    } else if (*constrained) {
      run_constrained(experiment_config(g, ExperimentMode::kConstrained), &std::cerr);
    } else if (*report) {
      const auto r = write_report(results_dir.empty() ? out : fs::path(results_dir));
      std::cout << r.summary;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return EXIT_SUCCESS;
}
