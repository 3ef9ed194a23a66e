#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "normforge/incentives.hpp"
#include "normforge/rng.hpp"
#include "normforge/sim.hpp"
#include "normforge/stationary.hpp"
#include "oracles.hpp"

using namespace normforge;

namespace {

NetworkEnv<> make_env(double eps, double c, double delta = 0.8, double lambda = 1.0) {
  NetworkEnv<> env;
  env.r = 1;
  env.c = c;
  env.eps = eps;
  env.lambda = lambda;
  env.delta = delta;
  return env;
}

double linf(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

// In mixed populations an active reciprocative peer uploads only
// `uploads(mu_r)` chunks per period, so its error-punish probability is lower
// than with a full lambda*b load. Solves that loop by plain iteration and
// returns the reciprocative distribution.
template <typename Uploads>
Eigen::VectorXd effective_reciprocative(const ProtocolParams<>& p, double eps, Uploads uploads) {
  double alpha = 0;
  for (int it = 0; it < 200; ++it) {
    const double mu_r = oracle::stationary(p, alpha).tail(p.L + 1 - p.h_o).sum();
    alpha = 1.0 - std::pow(1.0 - eps, uploads(mu_r));
  }
  return oracle::stationary(p, alpha);
}

}  // namespace

TEST_CASE("streams are addressed by key, not by draw order") {
  Stream a(9, 3, 17, Purpose::Error);
  Stream b(9, 3, 17, Purpose::Error);
  Stream other(9, 3, 17, Purpose::Forgive);
  Stream later(9, 3, 18, Purpose::Error);
  const auto first = a();
  CHECK(first == b());
  CHECK(first != other());
  CHECK(first != later());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("error-free compliant network climbs to L and earns K(r - c) per period") {
  const auto p = ProtocolParams<>::uniform(3, 2, 3);
  const auto env = make_env(0.0, 0.3, 0.8, 1.0);
  const auto trace = run_sim(SimConfig::from_env(p, env, 40, 10, 5));
  CHECK(trace.periods[3].eta[3] == doctest::Approx(1.0));
  CHECK((trace.final_reputation.array() == 3).all());
  for (int t = p.h_o; t < 10; ++t) {
    CHECK(trace.periods[t].active_utility == doctest::Approx(3 * (1.0 - 0.3)));
    CHECK(trace.periods[t].active_count == 40);
  }
  CHECK(trace.totals.unserved == 40 * 3 * p.h_o);  // nobody is active for the first h_o periods
  CHECK(trace.totals.errored == 0);
}

TEST_CASE("every request is served, errored or unserved, and shares sum to one") {
  auto p = ProtocolParams<>::uniform(4, 2, 2, 0.4);
  auto env = make_env(0.2, 0.3);
  auto cfg = SimConfig::from_env(p, env, 120, 60, 3);
  cfg.mix = {0.8, 0.1, 0.1};
  cfg.deviant = DeviantPolicy{30, DeviantAction::RefuseAll, 10, 20, std::nullopt};
  const auto trace = run_sim(cfg);
  TransactionCounts sum;
  for (const auto& rec : trace.periods) {
    CHECK(rec.counts.requests == rec.counts.served + rec.counts.errored + rec.counts.unserved);
    CHECK(rec.eta.sum() == doctest::Approx(1.0));
    CHECK(rec.max_seed_uploads <= 2);
    sum += rec.counts;
  }
  CHECK(sum == trace.totals);
  CHECK(trace.totals.refused > 0);
  CHECK(trace.totals.transactions() == trace.totals.served + trace.totals.errored + trace.totals.refused);
}

TEST_CASE("identical configs give identical traces") {
  auto p = ProtocolParams<>::with_thresholds(3, 1, (Eigen::VectorXi(3) << 1, 2, 3).finished(), 2, 0.3);
  auto cfg = SimConfig::from_env(p, make_env(0.15, 0.2), 80, 50, 42);
  const auto a = run_sim(cfg);
  const auto b = run_sim(cfg);
  REQUIRE(a.periods.size() == b.periods.size());
  for (std::size_t t = 0; t < a.periods.size(); ++t) {
    CHECK(a.periods[t].eta == b.periods[t].eta);
    CHECK(a.periods[t].counts == b.periods[t].counts);
    CHECK(a.periods[t].kind_utility == b.periods[t].kind_utility);
  }
  CHECK(a.discounted == b.discounted);
  CHECK(a.final_reputation == b.final_reputation);

  cfg.seed = 43;
  const auto c = run_sim(cfg);
  CHECK(c.discounted != a.discounted);
}

TEST_CASE("empirical distribution converges to the closed form") {
  const auto p = ProtocolParams<>::uniform(3, 1, 2);
  const auto env = make_env(0.1, 0.2);
  auto cfg = SimConfig::from_env(p, env, 2000, 2000, 11);
  cfg.window = 1000;
  const auto trace = run_sim(cfg);
  const double alpha = oracle::alpha(env, 2);
  const Eigen::VectorXd expected = oracle::stationary(p, alpha);
  CHECK(linf(trace.eta_window, expected) <= 0.02);
  CHECK(std::abs(trace.mu_window - 1.0 / (1.0 + alpha * p.h_o)) <= 0.01);
  CHECK(std::abs(trace.active_utility_window - 2 * (0.9 - 0.2)) <= 3 * trace.active_utility_se + 1e-9);
}

TEST_CASE("forgiveness and malicious peers follow the analytic distributions") {
  SUBCASE("forgiving scheme") {
    const auto p = ProtocolParams<>::uniform(4, 2, 3, 0.6);
    const auto env = make_env(0.1, 0.2);
    auto cfg = SimConfig::from_env(p, env, 2000, 1500, 2);
    const auto trace = run_sim(cfg);
    const auto analytic = stationary_fixed_point(p, env);
    CHECK(linf(trace.eta_window, oracle::stationary(p, oracle::alpha(env, 3))) <= 0.02);
    CHECK(linf(trace.eta_window, analytic.eta) <= 0.02);
  }
  SUBCASE("malicious mixture") {
    const auto p = ProtocolParams<>::uniform(3, 2, 2);
    auto env = make_env(0.05, 0.2);
    env.p_D = 0.2;
    const auto trace = run_sim(SimConfig::from_env(p, env, 2000, 1500, 4));
    const double pd = env.p_D;
    const Eigen::VectorXd recip = effective_reciprocative(p, env.eps, [&](double mu_r) {
      return 2 * (1 - pd) * mu_r / ((1 - pd) * mu_r + pd);
    });
    Eigen::VectorXd expected_eta = (1 - pd) * recip;
    expected_eta.head(p.h_o + 1).array() += pd / (p.h_o + 1);
    CHECK(linf(trace.eta_window, expected_eta) <= 0.02);

    // the active-peer utility formula, evaluated at the simulated active share
    auto d = stationary(p, env);
    d.mu = trace.mu_window;
    const double expected = one_period_utilities(p, env, d)[p.L];
    CHECK(std::abs(trace.active_utility_window - expected) <= 3 * trace.active_utility_se + 1e-3);
  }
}

TEST_CASE("active reciprocative utility with altruists matches the shared-load formula") {
  const auto p = ProtocolParams<>::uniform(3, 2, 4);
  auto env = make_env(0.1, 0.3);
  env.p_C = 0.2;
  const auto trace = run_sim(SimConfig::from_env(p, env, 2000, 1200, 8));
  const double pc = env.p_C;
  const Eigen::VectorXd recip = effective_reciprocative(p, env.eps, [&](double mu_r) {
    const double mu = pc + (1 - pc) * mu_r;
    return 4 * (mu - pc) / mu;
  });
  Eigen::VectorXd expected_eta = (1 - pc) * recip;
  expected_eta[p.L] += pc;
  CHECK(linf(trace.eta_window, expected_eta) <= 0.02);

  auto d = stationary(p, env);
  d.mu = trace.mu_window;
  const double expected = one_period_utilities(p, env, d)[p.L];
  CHECK(std::abs(trace.active_utility_window - expected) <= 3 * trace.active_utility_se + 1e-3);
  for (const auto& rec : trace.periods) CHECK(rec.max_seed_uploads <= 4);
}

TEST_CASE("tit-for-tat without errors cooperates from the second period") {
  auto cfg = SimConfig::from_env(ProtocolParams<>::uniform(1, 1, 3), make_env(0.0, 0.4), 50, 8, 1);
  cfg.flavor = Flavor::Tft;
  const auto trace = run_tft(cfg);
  CHECK(trace.eta_window.size() == 2);
  for (int t = 1; t < 8; ++t) {
    CHECK(trace.periods[t].eta[1] == doctest::Approx(1.0));
    CHECK(trace.periods[t].counts.served == 150);
  }
  CHECK_THROWS_AS(run_tft(SimConfig::from_env(ProtocolParams<>::uniform(1, 1, 3), make_env(0, 0.4), 50, 8, 1)),
                  InvalidParameter);
}

TEST_CASE("deviation never pays when uploads are free") {
  const auto p = ProtocolParams<>::uniform(3, 2, 2, 0.5);
  const auto cfg = SimConfig::from_env(p, make_env(0.1, 0.0), 100, 10, 3);
  for (int theta = 0; theta <= 3; ++theta) CHECK(measure_deviation_gain(cfg, theta, {.pairs = 20}).mean <= 0.0);
}

TEST_CASE("measured deviation gains follow the analytic slacks") {
  SUBCASE("sustainable norm: every gain is negative with 95% confidence") {
    const auto p = ProtocolParams<>::uniform(3, 1, 2);
    const auto env = make_env(0.1, 0.2);
    REQUIRE(check_equilibrium(p, env).is_equilibrium);
    const auto cfg = SimConfig::from_env(p, env, 200, 10, 9);
    for (int theta = 0; theta <= 3; ++theta) {
      const auto g = measure_deviation_gain(cfg, theta, {.pairs = 100});
      CHECK(g.mean + 1.645 * g.std_error < 0);
    }
  }
  SUBCASE("norm failing by a wide margin: active peers gain") {
    const auto p = ProtocolParams<>::uniform(3, 1, 4);
    const auto env = make_env(0.2, 0.7, 0.5);
    const auto report = check_equilibrium(p, env);
    REQUIRE(report.serve_slack < -1.0);
    const auto cfg = SimConfig::from_env(p, env, 200, 10, 9);
    for (int theta = p.h_o; theta <= 3; ++theta) {
      const auto g = measure_deviation_gain(cfg, theta, {.pairs = 40});
      CHECK(g.mean - 2 * g.std_error > 0);
    }
  }
  SUBCASE("gain equals minus the per-level slack") {
    const auto p = ProtocolParams<>::uniform(3, 2, 3, 0.4);
    const auto env = make_env(0.05, 0.3, 0.7);
    const auto report = check_equilibrium(p, env);
    const auto cfg = SimConfig::from_env(p, env, 200, 10, 21);
    for (int theta = 0; theta <= 3; ++theta) {
      const auto g = measure_deviation_gain(cfg, theta, {.pairs = 60});
      // the slack of an inactive level prices a single unprescribed upload;
      // the simulated deviant makes K = 3 of them
      const double extra = theta < p.h_o ? 2 * env.c : 0.0;
      CHECK(std::abs(g.mean + report.per_theta_slacks[theta] + extra) <= 4 * g.std_error + 1e-6);
    }
  }
}

TEST_CASE("a permanent free-rider ends below the compliant average") {
  const auto p = ProtocolParams<>::uniform(3, 1, 2);
  const auto env = make_env(0.1, 0.2);
  double sum = 0;
  double sq = 0;
  const int seeds = 30;
  for (int s = 0; s < seeds; ++s) {
    auto cfg = SimConfig::from_env(p, env, 100, 80, 1000 + s);
    cfg.deviant = DeviantPolicy{0, DeviantAction::RefuseAll, 0, -1, std::nullopt};
    const auto trace = run_sim(cfg);
    const double compliant = trace.discounted.tail(99).mean();
    const double d = trace.discounted[0] - compliant;
    sum += d;
    sq += d * d;
  }
  const double mean = sum / seeds;
  const double se = std::sqrt((sq / seeds - mean * mean) / (seeds - 1));
  CHECK(mean + 1.645 * se < 0);
}

TEST_CASE("collapse drives reciprocative delivery down to what seeds provide") {
  auto env = make_env(0.1, 0.9, 0.8);
  env.p_C = 0.3;
  auto cfg = SimConfig::from_env(ProtocolParams<>::uniform(1, 1, 5), env, 200, 200, 11);
  cfg.flavor = Flavor::Tft;
  const auto report = assess_cooperation(cfg, {.pairs = 20});
  CHECK_FALSE(report.sustained);
  // 60 seeds with 5 uploads each against 140 * 5 requests
  CHECK(report.delivery_rate <= 60.0 * 5 / (140 * 5) + 1e-9);
  CHECK(report.delivery_rate > 0.3);
}

TEST_CASE("config validation names the field") {
  auto cfg = SimConfig::from_env(ProtocolParams<>::uniform(3, 1, 2), make_env(0.1, 0.2), 1, 10, 1);
  try {
    run_sim(cfg);
    FAIL("expected a throw");
  } catch (const InvalidParameter& e) {
    CHECK(e.field() == "sim.n_peers");
  }
  cfg.n_peers = 10;
  cfg.mix = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(run_sim(cfg), InvalidParameter);
  cfg.mix = {};
  cfg.env.lambda = 0.2;
  CHECK_THROWS_AS(run_sim(cfg), InvalidParameter);
}
