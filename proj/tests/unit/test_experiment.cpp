#include <doctest.h>

#include <atomic>
#include <sstream>

#include "survope/config.hpp"
#include "survope/experiment.hpp"
#include "survope/report.hpp"
#include "test_util.hpp"

using namespace survope;

namespace {

// Small enough that a whole sweep takes a second or two.
ExperimentConfig tiny(ExperimentMode mode, const std::filesystem::path& out) {
  ExperimentConfig c;
  c.mode = mode;
  c.env.reference_size = 3000;
  c.env.dim = 3;
  c.env.num_actions = 3;
  c.grid_points = 20;
  c.defaults.n = 400;
  c.n_trials = 3;
  c.n_test = 2000;
  c.output_dir = out;
  c.base_seed = 5;
  c.train.hidden = {8};
  c.train.max_epochs = 4;
  c.train.batch_size = 64;
  c.lagrangian.hidden = {8};
  c.lagrangian.epochs = 4;
  c.lagrangian.batch_size = 64;
  return c;
}

std::size_t count_rows(const CsvTable& t, const std::string& column, const std::string& value) {
  const auto c = t.column(column);
  return static_cast<std::size_t>(
      std::count_if(t.rows.begin(), t.rows.end(), [&](const auto& r) { return r[c] == value; }));
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("toml subset parser") {
  const auto j = parse_toml(R"(
# comment
mode = "opl"   # trailing comment
n_trials = 12
weight_floor = 2.5e-2
paper_scale = false
name = "a \"quoted\" \\ value\n"
estimators = [
  "ipcw_dr",   # one
  "logging",
]
[env]
dim = 4
base_costs = [0, 0.5, 1.0, 1.5]
[train.inner]
x = -3
[sweep]
values = [[1, 2], [3]]
a.b = true
)");
  CHECK(j.at("mode") == "opl");
  CHECK(j.at("n_trials") == 12);
  CHECK(j.at("n_trials").is_number_integer());
  CHECK(j.at("weight_floor").get<double>() == 0.025);
  CHECK(j.at("paper_scale") == false);
  CHECK(j.at("name") == "a \"quoted\" \\ value\n");
  CHECK(j.at("estimators") == nlohmann::json::array({"ipcw_dr", "logging"}));
  CHECK(j.at("env").at("dim") == 4);
  CHECK(j.at("env").at("base_costs").size() == 4);
  CHECK(j.at("train").at("inner").at("x") == -3);
  CHECK(j.at("sweep").at("values")[0][1] == 2);
  CHECK(j.at("sweep").at("a").at("b") == true);
}

TEST_CASE("toml errors carry source and line") {
  auto message = [](const std::string& text) {
    try {
      parse_toml(text, "cfg.toml");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("a = 1\na = 2\n").find("cfg.toml:2") != std::string::npos);
  CHECK(message("a = 1\nb = \n").find("cfg.toml:2") != std::string::npos);
  CHECK(message("[t]\nx=1\n[t]\n").find("cfg.toml:3") != std::string::npos);
  CHECK(message("s = \"open\n").find("cfg.toml:1") != std::string::npos);
  CHECK(message("x = [1, 2\n") != "no error");
  CHECK(message("x = 1 2\n") != "no error");
}

TEST_CASE("experiment config from TOML equals JSON and rejects bad input") {
  const auto dir = testutil::temp_dir("config");
  testutil::write_file(dir / "c.toml", R"(
mode = "ope"
n_trials = 7
nuisance = "oracle"
estimators = ["ipcw_ips", "dm"]
[env]
dim = 5
[defaults]
rho1 = 0.4
[sweep]
axis = "epsilon"
values = [0.1, 0.3]
[train]
learning_rate = 0.02
sense = "minimize"
)");
  testutil::write_file(dir / "c.json", R"({"mode": "ope", "n_trials": 7, "nuisance": "oracle",
    "estimators": ["ipcw_ips", "dm"], "env": {"dim": 5}, "defaults": {"rho1": 0.4},
    "sweep": {"axis": "epsilon", "values": [0.1, 0.3]},
    "train": {"learning_rate": 0.02, "sense": "minimize"}})");
  const auto a = load_experiment_config(dir / "c.toml");
  const auto b = load_experiment_config(dir / "c.json");
  CHECK(experiment_config_to_json(a) == experiment_config_to_json(b));
  CHECK(a.trials() == 7);
  CHECK(a.axis == SweepAxis::kEpsilon);
  CHECK(a.resolved_sweep() == std::vector<double>{0.1, 0.3});
  CHECK(a.env.dim == 5);
  CHECK(a.defaults.rho1 == 0.4);
  CHECK(a.train.sense == ObjectiveSense::kMinimize);
  CHECK(a.nuisance == NuisanceMode::kOracle);

  auto fails = [&](const std::string& text) {
    testutil::write_file(dir / "bad.toml", text);
    try {
      load_experiment_config(dir / "bad.toml");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(fails("mode = \"ope\"\ncolour = 1\n").find("colour") != std::string::npos);
  CHECK(fails("mode = \"ope\"\n[env]\ndimm = 3\n").find("env.dimm") != std::string::npos);
  CHECK_FALSE(fails("mode = \"ope\"\n[sweep]\nvalues = []\n").empty());
  CHECK_FALSE(fails("mode = \"ope\"\n[sweep]\naxis = \"rho1\"\nvalues = [1.5]\n").empty());
  CHECK_FALSE(fails("mode = \"nope\"\n").empty());
  CHECK_FALSE(fails("mode = \"ope\"\nn_trials = 1\n").empty());
  CHECK_FALSE(fails("mode = \"ope\"\nestimators = [\"snips\"]\n").empty());
  CHECK_FALSE(fails("mode = \"constrained\"\nestimators = [\"logging\"]\n").empty());
  CHECK_FALSE(fails("mode = \"ope\"\nthreads = \"two\"\n").empty());
  CHECK_THROWS_AS(load_experiment_config(dir / "missing.toml"), ConfigError);
}

TEST_CASE("config resolution defaults") {
  ExperimentConfig c;
  CHECK(c.trials() == 50);
  CHECK(c.test_size() == 50'000);
  c.paper_scale = true;
  CHECK(c.trials() == 100);
  CHECK(c.test_size() == 100'000);
  c.paper_scale = false;
  c.mode = ExperimentMode::kOpl;
  CHECK(c.trials() == 10);
  CHECK(c.resolved_sweep() == std::vector<double>{10'000});
  CHECK(c.resolved_methods().front() == "logging");
  CHECK(default_sweep_values(SweepAxis::kN) == std::vector<double>{500, 1000, 2000, 5000, 10000});
  CHECK(default_sweep_values(SweepAxis::kBeta) == std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0});
  CHECK(default_sweep_values(SweepAxis::kRho1) == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
  CHECK(sweep_axis_from_string("rho1") == SweepAxis::kRho1);
  CHECK_THROWS_AS(sweep_axis_from_string("gamma"), ConfigError);
  const auto env = env_config_for(c, SweepAxis::kRho1, 0.45);
  CHECK(env.target_censoring_rate == 0.45);
  CHECK(env.beta == 1.0);
  CHECK(env_config_for(c, SweepAxis::kBeta, 2.0).beta == 2.0);
}

TEST_CASE("csv table and number formatting") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  const auto dir = testutil::temp_dir("csv_table");
  CsvTable t;
  t.header = {"a", "b"};
  t.rows = {{"1", "x"}, {"2", "y"}};
  t.write(dir / "sub" / "t.csv");
  const auto back = CsvTable::read(dir / "sub" / "t.csv");
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(t.str() == "a,b\n1,x\n2,y\n");
  CHECK(t.column("b") == 1);
  CHECK_THROWS_AS(t.column("c"), Error);
}

TEST_CASE("parallel_for runs everything and rethrows the lowest failure") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 7 || i == 31 || i == 44) throw Error("boom " + std::to_string(i));
    });
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "boom 7");
  }
}

TEST_CASE("truth cache serves stored values") {
  const auto dir = testutil::temp_dir("cache");
  int calls = 0;
  auto compute = [&] {
    ++calls;
    return MonteCarloValue{1.25, 0.01};
  };
  const nlohmann::json key{{"env", 1}, {"policy", "pi"}};
  const auto a = cached_value(dir, key, compute);
  const auto b = cached_value(dir, key, compute);
  CHECK(calls == 1);
  CHECK(a.value == b.value);
  CHECK(b.std_error == 0.01);
  cached_value(dir, nlohmann::json{{"env", 2}}, compute);
  CHECK(calls == 2);
}

TEST_CASE("OPE sweep is reproducible and independent of thread count") {
  const auto root = testutil::temp_dir("ope_sweep");
  auto c = tiny(ExperimentMode::kOpe, root / "a");
  c.axis = SweepAxis::kRho1;
  c.sweep_values = {0.2, 0.4};
  c.nuisance = NuisanceMode::kFitted;
  const auto t = run_ope_sweep(c);
  REQUIRE(t.rows.size() == 2 * 5);
  CHECK(t.header.front() == "axis");
  CHECK(count_rows(t, "estimator", "ipcw_dr") == 2);
  const auto first = testutil::read_file(root / "a" / "ope_rho1.csv");
  CHECK(std::filesystem::exists(root / "a" / "ope_rho1.config.json"));
  run_ope_sweep(c);
  CHECK(testutil::read_file(root / "a" / "ope_rho1.csv") == first);
  c.output_dir = root / "b";
  c.threads = 2;
  run_ope_sweep(c);
  CHECK(testutil::read_file(root / "b" / "ope_rho1.csv") == first);

  for (const auto& row : t.rows) {
    const double mse = std::stod(row[t.column("mse")]);
    const double sb = std::stod(row[t.column("squared_bias")]);
    const double var = std::stod(row[t.column("variance")]);
    CHECK(std::abs(mse - sb - var) < 1e-9 * std::max(1.0, mse));
  }
}

TEST_CASE("trial errors name the sweep value, trial and seed") {
  const auto root = testutil::temp_dir("ope_error");
  auto c = tiny(ExperimentMode::kOpe, root);
  c.sweep_values = {2};  // too few records to see every action
  try {
    run_ope_sweep(c);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("n=2, trial 0, seed 5") != std::string::npos);
  }
}

TEST_CASE("OPL sweep: logging passthrough and beta axis") {
  const auto root = testutil::temp_dir("opl_sweep");
  auto c = tiny(ExperimentMode::kOpl, root);
  c.axis = SweepAxis::kBeta;
  c.sweep_values = default_sweep_values(SweepAxis::kBeta);
  c.estimators = {"logging", "regression", "ipcw_dr"};
  std::ostringstream log;
  const auto t = run_opl_sweep(c, &log);
  CHECK(t.rows.size() == 15);
  for (const auto& l : c.estimators) CHECK(count_rows(t, "learner", l) == 5);
  for (const auto& row : t.rows) {
    if (row[t.column("learner")] != "logging") continue;
    CHECK(row[t.column("ratio_mean")] == "1");
    CHECK(row[t.column("ratio_std")] == "0");
  }
  CHECK(std::filesystem::exists(root / "opl_beta.csv"));
  CHECK_FALSE(log.str().empty());
}

TEST_CASE("constrained run: slack budget is always feasible") {
  const auto root = testutil::temp_dir("constrained");
  auto c = tiny(ExperimentMode::kConstrained, root);
  c.budget_ratio = 10.0;
  const auto t = run_constrained(c);
  REQUIRE(t.rows.size() == 2);
  for (const auto& row : t.rows) {
    CHECK(row[t.column("feasible_rate")] == "1");
    CHECK(std::stod(row[t.column("final_lambda_mean")]) >= 0.0);
  }
  CHECK(t.header == std::vector<std::string>{"learner", "n_trials", "budget", "rmst_mean", "rmst_std",
                                             "cost_mean", "cost_std", "feasible_rate", "final_lambda_mean"});
}

TEST_CASE("report") {
  const auto empty = testutil::temp_dir("report_empty");
  CHECK_THROWS_AS(write_report(empty), Error);
  CHECK_THROWS_AS(write_report(empty / "nope"), Error);

  const auto dir = testutil::temp_dir("report");
  testutil::write_file(dir / "opl_n.csv",
                       "axis,axis_value,learner,n_trials,ratio_mean,ratio_std\n"
                       "n,500,logging,10,1,0\n"
                       "n,500,ipcw_dr,10,1.2,0.1\n");
  const auto out = write_report(dir);
  REQUIRE(out.tidy_files.size() == 1);
  const auto tidy = CsvTable::read(out.tidy_files[0]);
  CHECK(tidy.header == std::vector<std::string>{"axis", "axis_value", "estimator", "metric", "value"});
  CHECK(tidy.rows.size() == 4);
  std::size_t sections = 0;
  for (std::size_t p = out.summary.find("== "); p != std::string::npos; p = out.summary.find("== ", p + 1)) ++sections;
  CHECK(sections == 1);
  CHECK(out.summary.find("1.2 *") != std::string::npos);
  CHECK(testutil::read_file(out.summary_file) == out.summary);

  testutil::write_file(dir / "ope_n.csv", "axis,axis_value,estimator\nn,500,dm\n");
  try {
    write_report(dir);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("ope_n.csv") != std::string::npos);
    CHECK(msg.find("missing column") != std::string::npos);
  }
}

}  // TEST_SUITE
