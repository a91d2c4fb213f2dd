#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "survope/nuisance.hpp"
#include "survope/synthenv.hpp"
#include "test_util.hpp"

using namespace survope;

namespace {

// Survival data with hazard exp(log_hazard(x)) times an independent
// exponential censoring of the given mean (0 disables censoring).
Dataset exponential_data(std::size_t n, std::size_t dim, std::size_t num_actions,
                         const std::function<double(const std::vector<double>&)>& log_hazard,
                         double censoring_mean, std::uint64_t seed) {
  auto rng = seeded_rng(seed, 0);
  Dataset d(dim, num_actions);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = testutil::normal_vector(rng, dim);
    const double L = rng.exponential() / std::exp(log_hazard(x));
    const double C = censoring_mean > 0.0 ? censoring_mean * rng.exponential() : INFINITY;
    d.push_back({x, i % num_actions, std::min(L, C), L <= C, std::nullopt});
  }
  return d;
}

// Coordinate-wise golden-section ascent; deliberately unrelated to the
// Newton solver it checks.
std::vector<double> golden_ascent(const std::function<double(const std::vector<double>&)>& f,
                                  std::vector<double> b) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int sweep = 0; sweep < 60; ++sweep) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      double lo = b[j] - 2.0;
      double hi = b[j] + 2.0;
      auto at = [&](double v) {
        auto c = b;
        c[j] = v;
        return f(c);
      };
      double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
      double f1 = at(x1), f2 = at(x2);
      for (int it = 0; it < 80; ++it) {
        if (f1 < f2) {
          lo = x1;
          x1 = x2;
          f1 = f2;
          x2 = lo + g * (hi - lo);
          f2 = at(x2);
        } else {
          hi = x2;
          x2 = x1;
          f2 = f1;
          x1 = hi - g * (hi - lo);
          f1 = at(x1);
        }
      }
      b[j] = 0.5 * (lo + hi);
    }
  }
  return b;
}

}  // namespace

TEST_SUITE("nuisance") {

TEST_CASE("propensity recovers a softmax-linear logging policy") {
  const auto env = make_env(1, EnvConfig{});
  const auto data = generate_dataset(env, 50'000, 21).dataset;
  const auto model = fit_propensity(data);
  CHECK(model.fitted());
  const auto truth = logging_policy(env);
  auto rng = seeded_rng(22, 0);
  double tv = 0.0;
  const int m = 5000;
  for (int i = 0; i < m; ++i) {
    const auto x = sample_context(env, rng);
    const auto p = model.probs(x);
    const auto q = truth->probs(x);
    double dist = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) dist += std::abs(p[a] - q[a]);
    tv += 0.5 * dist / m;
  }
  CHECK(tv < 0.02);
}

TEST_CASE("propensity precondition errors") {
  Dataset one(2, 3);
  for (int i = 0; i < 10; ++i) one.push_back({{0.1 * i, 1.0}, 0, 1.0, true, std::nullopt});
  CHECK_THROWS_AS(fit_propensity(one), Error);
  Dataset single_class(2, 1);
  single_class.push_back({{0.1, 1.0}, 0, 1.0, true, std::nullopt});
  CHECK_THROWS_AS(fit_propensity(single_class), Error);
  CHECK_THROWS_AS(fit_propensity(Dataset(2, 3)), Error);
}

TEST_CASE("fully shrunk propensity equals the empirical marginals") {
  const auto env = make_env(1, EnvConfig{});
  const auto data = generate_dataset(env, 5000, 23).dataset;
  std::vector<double> marginal(env.num_actions, 0.0);
  for (const auto& r : data) marginal[r.action] += 1.0 / data.size();
  PropensityFitOptions opt;
  opt.l2 = 1e6;
  const auto model = fit_propensity(data, opt);
  auto rng = seeded_rng(24, 0);
  for (int i = 0; i < 50; ++i) {
    const auto p = model.probs(sample_context(env, rng));
    for (std::size_t a = 0; a < p.size(); ++a) CHECK(std::abs(p[a] - marginal[a]) < 1e-3);
  }
}

TEST_CASE("propensity optimum satisfies the first-order conditions") {
  auto rng = seeded_rng(25, 0);
  const std::size_t d = 3, K = 4, n = 2000;
  Dataset data(d, K);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = testutil::normal_vector(rng, d);
    const std::vector<double> w{1.0 + x[0], 1.0, std::exp(x[1]), 0.5};
    data.push_back({x, rng.categorical(w), 1.0, true, std::nullopt});
  }
  const PropensityFitOptions opt;
  const auto model = fit_propensity(data, opt);
  REQUIRE(model.converged());

  // Penalized log-likelihood gradient assembled by hand.
  std::vector<double> gw(d * K, 0.0), gb(K, 0.0);
  for (const auto& r : data) {
    const auto p = model.probs(r.context);
    for (std::size_t a = 0; a < K; ++a) {
      const double resid = (r.action == a ? 1.0 : 0.0) - p[a];
      gb[a] += resid / n;
      for (std::size_t j = 0; j < d; ++j) gw[j * K + a] += r.context[j] * resid / n;
    }
  }
  double worst = 0.0;
  for (std::size_t a = 0; a + 1 < K; ++a) {
    worst = std::max(worst, std::abs(gb[a]));
    for (std::size_t j = 0; j < d; ++j)
      worst = std::max(worst, std::abs(gw[j * K + a] - opt.l2 * model.weights()[j * K + a]));
  }
  CHECK(worst < 1.01 * opt.tol);
  for (std::size_t j = 0; j < d; ++j) CHECK(model.weights()[j * K + K - 1] == 0.0);
  CHECK(model.intercepts()[K - 1] == 0.0);
}

TEST_CASE("cox recovers null and planted coefficients") {
  const auto null_data = exponential_data(40'000, 3, 2, [](const auto&) { return 0.0; }, 0.0, 31);
  const auto null_model = fit_cox(null_data, SurvivalTarget::kEvent);
  for (std::size_t a = 0; a < 2; ++a)
    for (double b : null_model.stratum(a).coefficients) CHECK(std::abs(b) < 0.05);

  const auto planted = exponential_data(50'000, 2, 1, [](const auto& x) { return 0.5 * x[0]; }, 0.0, 32);
  const auto model = fit_cox(planted, SurvivalTarget::kEvent);
  CHECK(std::abs(model.stratum(0).coefficients[0] - 0.5) < 0.05);
  CHECK(std::abs(model.stratum(0).coefficients[1]) < 0.05);
  CHECK(model.stratum(0).converged);
}

TEST_CASE("cox predictions are proper survival curves") {
  const auto data = exponential_data(3000, 3, 2, [](const auto& x) { return 0.3 * x[1]; }, 2.0, 33);
  const auto model = fit_cox(data, SurvivalTarget::kEvent);
  auto rng = seeded_rng(34, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto x = testutil::normal_vector(rng, 3);
    const std::size_t a = rng.index(2);
    double t1 = 3.0 * rng.uniform(), t2 = 3.0 * rng.uniform();
    if (t1 > t2) std::swap(t1, t2);
    const double s1 = predict_survival(model, x, a, t1);
    const double s2 = predict_survival(model, x, a, t2);
    REQUIRE(s1 >= s2);
    REQUIRE(s2 > 0.0);
    REQUIRE(s1 <= 1.0);
    REQUIRE(predict_survival(model, x, a, 0.0) == 1.0);
  }
  const auto& s = model.stratum(0);
  CHECK(s.baseline_cumulative_hazard(0.0) == 0.0);
  CHECK(std::is_sorted(s.cumulative_hazard.begin(), s.cumulative_hazard.end()));
  CHECK(std::is_sorted(s.event_times.begin(), s.event_times.end()));
  // Beyond the last observed time the last value carries forward.
  const std::vector<double> x0(3, 0.0);
  CHECK(predict_survival(model, x0, 0, 1e6) == predict_survival(model, x0, 0, s.event_times.back()));
  CHECK_THROWS_AS(predict_survival(model, x0, 2, 1.0), Error);
}

TEST_CASE("cox newton iterations increase the objective and reach the optimum") {
  const auto data = exponential_data(300, 2, 1, [](const auto& x) { return 0.7 * x[0] - 0.4 * x[1]; }, 1.5, 35);
  const auto model = fit_cox(data, SurvivalTarget::kEvent);
  const auto& s = model.stratum(0);
  REQUIRE(s.objective_trace.size() >= 2);
  for (std::size_t k = 1; k < s.objective_trace.size(); ++k) CHECK(s.objective_trace[k] >= s.objective_trace[k - 1]);

  auto f = [&](const std::vector<double>& b) {
    return cox_penalized_objective(data, 0, SurvivalTarget::kEvent, b, model.l2());
  };
  const double at_fit = f(s.coefficients);
  CHECK(at_fit == doctest::Approx(s.objective_trace.back()).epsilon(1e-12));
  const auto restart = golden_ascent(f, {s.coefficients[0] + 0.3, s.coefficients[1] - 0.2});
  CHECK(std::abs(f(restart) - at_fit) < 1e-8);
  CHECK(f(restart) <= at_fit + 1e-12);
}

TEST_CASE("cox matches Kaplan-Meier at the stratum center") {
  const auto env = make_env(1, EnvConfig{});
  const auto data = generate_dataset(env, 20'000, 36).dataset;
  const auto cox = fit_cox(data, SurvivalTarget::kEvent);
  const auto km = fit_kaplan_meier(data, SurvivalTarget::kEvent);
  for (std::size_t a = 0; a < env.num_actions; ++a) {
    std::vector<double> mean(env.dim, 0.0);
    std::vector<double> event_times;
    std::size_t count = 0;
    for (const auto& r : data) {
      if (r.action != a) continue;
      ++count;
      for (std::size_t j = 0; j < env.dim; ++j) mean[j] += r.context[j];
      if (r.event) event_times.push_back(r.observed_time);
    }
    for (double& m : mean) m /= static_cast<double>(count);
    std::sort(event_times.begin(), event_times.end());
    const double t = event_times[event_times.size() / 2];
    CAPTURE(a);
    CHECK(std::abs(cox.survival(mean, a, t) - km.survival(mean, a, t)) < 0.1);
  }
}

TEST_CASE("kaplan-meier hand cases") {
  Dataset three(1, 1);
  for (double t : {1.0, 2.0, 3.0}) three.push_back({{0.0}, 0, t, true, std::nullopt});
  const auto km = fit_kaplan_meier(three, SurvivalTarget::kEvent);
  const std::vector<double> x{0.0};
  CHECK(km.survival(x, 0, 0.5) == 1.0);
  CHECK(km.survival(x, 0, 1.0) == doctest::Approx(2.0 / 3.0));
  CHECK(km.survival(x, 0, 2.0) == doctest::Approx(1.0 / 3.0));
  CHECK(km.survival(x, 0, 3.0) == doctest::Approx(0.0));
  CHECK(km.survival(x, 0, 2.5) == doctest::Approx(1.0 / 3.0));
  // Flipped target: nothing censored, so G == 1.
  CHECK(fit_kaplan_meier(three, SurvivalTarget::kCensoring).survival(x, 0, 10.0) == 1.0);

  Dataset censored(1, 2);
  for (double t : {0.5, 1.5, 4.0}) censored.push_back({{0.0}, 1, t, false, std::nullopt});
  const auto flat = fit_kaplan_meier(censored, SurvivalTarget::kEvent);
  for (double t : {0.0, 1.0, 5.0}) {
    CHECK(flat.survival(x, 1, t) == 1.0);
    CHECK(flat.survival(x, 0, t) == 1.0);
  }
}

TEST_CASE("kaplan-meier without censoring is the empirical survival function") {
  auto rng = seeded_rng(37, 0);
  Dataset d(1, 1);
  std::vector<double> times;
  for (int i = 0; i < 500; ++i) {
    times.push_back(rng.exponential());
    d.push_back({{0.0}, 0, times.back(), true, std::nullopt});
  }
  const auto km = fit_kaplan_meier(d, SurvivalTarget::kEvent);
  const std::vector<double> x{0.0};
  for (double t = 0.0; t < 4.0; t += 0.037) {
    const double ecdf = std::count_if(times.begin(), times.end(), [&](double v) { return v > t; }) / 500.0;
    CHECK(km.survival(x, 0, t) == doctest::Approx(ecdf).epsilon(1e-12));
  }
}

TEST_CASE("cox and kaplan-meier censoring curves agree under independent censoring") {
  const auto data = exponential_data(20'000, 3, 1, [](const auto& x) { return 0.5 * x[0]; }, 1.2, 38);
  const auto cox = fit_cox(data, SurvivalTarget::kCensoring);
  const auto km = fit_kaplan_meier(data, SurvivalTarget::kCensoring);
  std::vector<double> times;
  for (const auto& r : data) times.push_back(r.observed_time);
  std::sort(times.begin(), times.end());
  const std::vector<double> center(3, 0.0);
  for (int q = 1; q <= 9; ++q) {
    const double t = times[times.size() * q / 10];
    CAPTURE(q);
    CHECK(std::abs(cox.survival(center, 0, t) - km.survival(center, 0, t)) < 0.03);
  }
}

TEST_CASE("zero-event strata degenerate with a warning") {
  Dataset d(1, 3);
  auto rng = seeded_rng(39, 0);
  for (int i = 0; i < 60; ++i) {
    const std::size_t a = i % 2;  // action 2 never appears
    d.push_back({{rng.normal()}, a, 0.1 + rng.exponential(), a == 0, std::nullopt});
  }
  const auto model = fit_cox(d, SurvivalTarget::kEvent);
  CHECK(model.stratum(1).degenerate);
  CHECK(model.stratum(2).degenerate);
  CHECK_FALSE(model.stratum(0).degenerate);
  const std::vector<double> x{0.3};
  CHECK(model.survival(x, 1, 5.0) == 1.0);
  const auto w = model.warnings();
  REQUIRE(w.size() == 2);
  CHECK(w[0].find("action 1") != std::string::npos);
}

TEST_CASE("clamp_censoring_weight") {
  CHECK(clamp_censoring_weight(0.5, 0.02) == 0.5);
  CHECK(clamp_censoring_weight(0.001, 0.02) == 0.02);
  CHECK(clamp_censoring_weight(0.0, 0.02) == 0.02);
  CHECK(clamp_censoring_weight(0.001) == 0.02);
  CHECK(clamp_censoring_weight(0.001, 0.0) == 0.001);
  CHECK_THROWS_AS(clamp_censoring_weight(0.5, 1.0), Error);
}

TEST_CASE("fitted nuisance survives a JSON round trip") {
  const auto env = make_env(1, EnvConfig{});
  const auto data = generate_dataset(env, 3000, 40).dataset;
  const auto fitted = fit_nuisance(data);
  const auto dir = testutil::temp_dir("nuisance_json");
  save_nuisance_json(fitted, dir / "n.json");
  const auto back = load_nuisance_json(dir / "n.json");
  CHECK(nuisance_to_json(back).dump() == nuisance_to_json(fitted).dump());
  auto rng = seeded_rng(41, 0);
  for (int i = 0; i < 20; ++i) {
    const auto x = sample_context(env, rng);
    const std::size_t a = rng.index(env.num_actions);
    CHECK(back.outcome->survival(x, a, 0.7) == fitted.outcome->survival(x, a, 0.7));
    CHECK(back.censoring->survival(x, a, 0.7) == fitted.censoring->survival(x, a, 0.7));
    CHECK(back.propensity->probs(x) == fitted.propensity->probs(x));
    CHECK(back.censoring_km->survival(x, a, 0.7) == fitted.censoring_km->survival(x, a, 0.7));
  }
  const auto b = fitted.bundle(0.05);
  CHECK(b.weight_floor == 0.05);
  CHECK(b.censoring == fitted.censoring);
  testutil::write_file(dir / "bad.json", "{\"propensity\": 3}");
  CHECK_THROWS_AS(load_nuisance_json(dir / "bad.json"), Error);
}

}  // TEST_SUITE
