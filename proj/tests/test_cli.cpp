#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "normforge/cli.hpp"
#include "oracles.hpp"

using namespace normforge;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "normforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("normforge_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string write(const std::string& name, const std::string& text) {
  const fs::path p = scratch() / name;
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::string cell(const std::vector<std::vector<std::string>>& t, std::size_t row, const std::string& col) {
  const auto& h = t.at(0);
  const auto it = std::find(h.begin(), h.end(), col);
  REQUIRE(it != h.end());
  return t.at(row).at(static_cast<std::size_t>(it - h.begin()));
}

Json error_of(const Run& r) { return Json::parse(r.err).at("error"); }

const char* kBaseline = R"({
  "env": {"r": 1, "c": 0.2, "eps": 0.1, "lambda": 1, "delta": 0.8},
  "params": {"L": 3, "h_o": 1, "b": 2, "beta": 0}
})";

}  // namespace

TEST_CASE("analyze reports the stationary distribution of the baseline scenario") {
  const std::string cfg = write("baseline.json", kBaseline);
  const Run r = run({"analyze", "--config", cfg});
  REQUIRE(r.code == kOk);
  const Json j = Json::parse(r.out);

  ProtocolParams<> p = ProtocolParams<>::uniform(3, 1, 2);
  NetworkEnv<> env;
  env.c = 0.2;
  env.eps = 0.1;
  env.delta = 0.8;
  const Eigen::VectorXd eta = oracle::stationary(p, oracle::alpha(env, 2));
  const double mu = eta.tail(3).sum();
  CHECK(j["mu"].get<double>() == doctest::Approx(mu).epsilon(1e-12));
  CHECK(j["mu"].get<double>() == doctest::Approx(0.84034).epsilon(1e-5));
  for (int k = 0; k <= 3; ++k) CHECK(j["eta"][k].get<double>() == doctest::Approx(eta[k]).epsilon(1e-12));
  CHECK(j.contains("v_one"));
  CHECK(j.contains("v_inf"));
  CHECK(j["is_equilibrium"].get<bool>());

  const Run csv = run({"analyze", "--config", cfg, "--format", "csv"});
  REQUIRE(csv.code == kOk);
  const auto t = parse_csv(csv.out);
  REQUIRE(t.size() == 2);
  CHECK(std::stod(cell(t, 1, "mu")) == doctest::Approx(mu).epsilon(1e-12));

  const Run clean = run({"analyze", "--config", cfg, "--eps", "0", "--format", "csv"});
  CHECK(cell(parse_csv(clean.out), 1, "mu") == "1");
}

TEST_CASE("configuration errors name the field and exit with 2") {
  const Run broken = run({"analyze", "--config", write("broken.json", "{\"env\": {\"r\": 1,")});
  CHECK(broken.code == kConfigError);
  CHECK(error_of(broken)["field"] == "config");
  CHECK(error_of(broken)["kind"] == "config");

  const Run unknown = run({"analyze", "--config", write("unknown.json", R"({"env": {"r": 1, "gamma": 2}, "params": {}})")});
  CHECK(unknown.code == kConfigError);
  CHECK(error_of(unknown)["field"] == "env.gamma");

  const Run typed = run({"analyze", "--config", write("typed.json", R"({"env": {"eps": "high"}, "params": {}})")});
  CHECK(typed.code == kConfigError);
  CHECK(error_of(typed)["field"] == "env.eps");

  const Run range = run({"analyze", "--config", write("range.json", kBaseline), "--h-o", "5"});
  CHECK(range.code == kConfigError);
  CHECK(error_of(range)["field"] == "params.h_o");

  const Run axis = run({"sweep", "--config", write("axis.json", R"({"params": {}, "sweep": [{"name": "zeta", "min": 0, "max": 1, "step": 0.1}]})")});
  CHECK(axis.code == kConfigError);
  CHECK(error_of(axis)["field"] == "sweep[0].name");

  const Run flag = run({"analyze", "--r", "abc"});
  CHECK(flag.code == kConfigError);
  CHECK(error_of(flag)["field"] == "--r");

  const Run missing = run({"analyze"});
  CHECK(missing.code == kConfigError);
  CHECK(error_of(missing)["field"] == "params");

  CHECK(run({}).code == kConfigError);
  CHECK(run({"frobnicate"}).code == kConfigError);
}

TEST_CASE("check exits with 3 when the norm is not an equilibrium") {
  const std::string cfg = write("check.json", kBaseline);
  CHECK(run({"check", "--config", cfg}).code == kOk);
  const Run bad = run({"check", "--config", cfg, "--c", "0.95"});
  CHECK(bad.code == kInfeasible);
  CHECK_FALSE(Json::parse(bad.out)["is_equilibrium"].get<bool>());
}

TEST_CASE("solve") {
  const std::string cfg = write("solve.json", R"({
    "env": {"r": 1, "c": 0.2, "eps": 0.1, "lambda": 1, "delta": 0.8},
    "design": {"problem": "osne", "L": 3, "b_cap": 5}
  })");

  SUBCASE("matches the designer and writes its search log") {
    const std::string log = (scratch() / "log.csv").string();
    const Run r = run({"solve", "--config", cfg, "--log-out", log});
    REQUIRE(r.code == kOk);
    DesignSpec spec;
    spec.L = 3;
    spec.b_cap = 5;
    spec.env.c = 0.2;
    spec.env.eps = 0.1;
    spec.env.delta = 0.8;
    const DesignResult direct = solve(spec);
    const Json j = Json::parse(r.out);
    CHECK(j["params"]["h_o"] == direct.params.h_o);
    CHECK(j["params"]["b"] == direct.params.b);
    CHECK(j["utility"].get<double>() == direct.utility);
    CHECK(j["search_log"].size() == direct.search_log.size());
    CHECK(parse_csv(slurp(log)).size() == direct.search_log.size() + 1);
  }

  SUBCASE("collapse past the existence threshold exits with 3") {
    const Run r = run({"solve", "--config", cfg, "--c", "0.95"});
    CHECK(r.code == kInfeasible);
    CHECK_FALSE(Json::parse(r.out)["feasible"].get<bool>());
  }

  SUBCASE("only the altruist problem carries p_C_star") {
    const Run ah = run({"solve", "--config", cfg, "--problem", "osne_ah", "--format", "csv"});
    REQUIRE(ah.code == kOk);
    const auto t = parse_csv(ah.out);
    CHECK(std::find(t[0].begin(), t[0].end(), "p_C_star") != t[0].end());
    CHECK(Json::parse(run({"solve", "--config", cfg, "--problem", "osne_ah"}).out).contains("p_C_star"));

    const auto plain = parse_csv(run({"solve", "--config", cfg, "--format", "csv"}).out);
    CHECK(std::find(plain[0].begin(), plain[0].end(), "p_C_star") == plain[0].end());
  }

  SUBCASE("columns depend only on the problem") {
    const auto a = parse_csv(run({"solve", "--config", cfg, "--problem", "osne_vp", "--format", "csv"}).out);
    const auto b = parse_csv(run({"solve", "--config", cfg, "--problem", "osne_vp", "--format", "csv", "--c", "0.95",
                                  "--L", "5", "--b-cap", "2"})
                                 .out);
    CHECK(a[0] == b[0]);
    CHECK(a[1].size() == b[1].size());
  }
}

TEST_CASE("sweep") {
  SUBCASE("a single-point sweep reproduces the analyze row") {
    const std::string cfg = write("single.json", R"({
      "env": {"r": 1, "c": 0.2, "eps": 0.1, "lambda": 1, "delta": 0.8},
      "params": {"L": 3, "h_o": 1, "b": 2, "beta": 0},
      "sweep": [{"name": "c", "min": 0.2, "max": 0.2, "step": 0.1}],
      "output": {"format": "csv"}
    })");
    const auto swept = parse_csv(run({"sweep", "--config", cfg}).out);
    const auto single = parse_csv(run({"analyze", "--config", cfg}).out);
    REQUIRE(swept.size() == 2);
    CHECK(swept[0].front() == "point");
    CHECK(swept[1].front() == "0");
    CHECK(std::vector<std::string>(swept[0].begin() + 1, swept[0].end()) == single[0]);
    CHECK(std::vector<std::string>(swept[1].begin() + 1, swept[1].end()) == single[1]);
  }

  SUBCASE("rows follow the grid in row-major order") {
    const std::string cfg = write("grid.json", R"({
      "env": {"r": 1, "c": 0.2, "eps": 0.1, "lambda": 1, "delta": 0.8},
      "params": {"L": 3, "h_o": 1, "b": 2, "beta": 0},
      "sweep": [{"name": "h_o", "min": 1, "max": 3, "step": 1}, {"name": "eps", "min": 0, "max": 0.2, "step": 0.1}],
      "output": {"format": "csv"}
    })");
    const auto t = parse_csv(run({"sweep", "--config", cfg}).out);
    REQUIRE(t.size() == 10);
    for (std::size_t i = 1; i < t.size(); ++i) {
      CHECK(cell(t, i, "point") == std::to_string(i - 1));
      CHECK(cell(t, i, "h_o") == std::to_string(1 + (i - 1) / 3));
      CHECK(std::stod(cell(t, i, "eps")) == doctest::Approx(0.1 * double((i - 1) % 3)));
    }
  }

  SUBCASE("at one connection the optimal threshold rises with c/r") {
    for (double eps : {0.02, 0.1, 0.2}) {
      const std::string cfg = write("cr.json", R"({
        "env": {"r": 1, "eps": )" + std::to_string(eps) + R"(, "lambda": 1, "delta": 0.9},
        "design": {"problem": "osne", "L": 3, "b_cap": 1},
        "sweep": [{"name": "c_r", "min": 0, "max": 0.95, "step": 0.05}],
        "output": {"format": "csv"}
      })");
      const auto t = parse_csv(run({"sweep", "--config", cfg}).out);
      int last = 0;
      bool collapsed = false;
      for (std::size_t i = 1; i < t.size(); ++i) {
        if (cell(t, i, "feasible") == "0") {
          collapsed = true;
          continue;
        }
        CHECK_FALSE(collapsed);
        const int h = std::stoi(cell(t, i, "h_o"));
        CHECK(h >= last);
        last = h;
      }
      CHECK(collapsed);
    }
  }

  SUBCASE("at one connection the optimal threshold rises with eps") {
    const std::string cfg = write("eps.json", R"({
      "env": {"r": 1, "c": 0.1, "lambda": 1, "delta": 0.9},
      "design": {"problem": "osne", "L": 3, "b_cap": 1},
      "sweep": [{"name": "eps", "min": 0, "max": 0.95, "step": 0.05}],
      "output": {"format": "csv"}
    })");
    const auto t = parse_csv(run({"sweep", "--config", cfg}).out);
    int last = 0;
    for (std::size_t i = 1; i < t.size(); ++i) {
      if (cell(t, i, "feasible") == "0") continue;
      const int h = std::stoi(cell(t, i, "h_o"));
      CHECK(h >= last);
      last = h;
    }
    CHECK(last > 1);
  }

  SUBCASE("for each threshold the best b falls with lambda") {
    for (int h = 1; h <= 3; ++h) {
      const std::string cfg = write("lambda.json", R"({
        "env": {"r": 1, "c": 0.2, "eps": 0.1, "lambda": 1, "delta": 0.8},
        "params": {"L": 3, "h_o": )" + std::to_string(h) + R"(, "b": 1, "beta": 0},
        "sweep": [{"name": "lambda", "min": 0.2, "max": 3, "step": 0.2}, {"name": "b", "min": 1, "max": 8, "step": 1}],
        "output": {"format": "csv"}
      })");
      const auto t = parse_csv(run({"sweep", "--config", cfg}).out);
      REQUIRE(t.size() == 1 + 15 * 8);
      int last = 8;
      for (int li = 0; li < 15; ++li) {
        int best = 0;
        double best_u = -1;
        for (int bi = 0; bi < 8; ++bi) {
          const std::size_t row = 1 + static_cast<std::size_t>(li * 8 + bi);
          if (cell(t, row, "is_equilibrium") != "1") continue;
          const double u = std::stod(cell(t, row, "U"));
          if (u > best_u) {
            best_u = u;
            best = bi + 1;
          }
        }
        if (best == 0) continue;
        CHECK(best <= last);
        last = best;
      }
    }
  }
}

TEST_CASE("scenarios survive a JSON round trip") {
  const Scenario s = parse_scenario(R"({
    "env": {"r": 2, "c": 0.3, "eps": 0.05, "lambda": 0.7, "delta": 0.9, "p_C": 0.1, "p_D": 0.05},
    "params": {"L": 4, "h_o": 2, "m_o": [2, 3, 3], "b": 3, "beta": 0.25},
    "design": {"problem": "osne_vps", "L": 4, "b_cap": 6, "beta_grid": 0.05},
    "sweep": [{"name": "c", "min": 0, "max": 1, "step": 0.1}],
    "sim": {"n_peers": 300, "n_periods": 400, "seed": 11, "flavor": "tft", "window": 50, "pairs": 8},
    "output": {"path": "out.csv", "format": "csv"}
  })");
  const Scenario back = parse_scenario(to_json(s).dump());
  CHECK(back == s);
  CHECK(parse_scenario(to_json(back).dump(2)) == back);
  CHECK(s.design->env == s.env);

  const Scenario minimal = parse_scenario(kBaseline);
  CHECK(parse_scenario(to_json(minimal).dump()) == minimal);
}

TEST_CASE("simulate") {
  const std::string cfg = write("sim.json", R"({
    "env": {"r": 1, "c": 0.2, "eps": 0.1, "lambda": 1, "delta": 0.8},
    "params": {"L": 3, "h_o": 1, "b": 2, "beta": 0},
    "sim": {"n_peers": 400, "n_periods": 400, "seed": 5},
    "output": {"format": "csv"}
  })");

  SUBCASE("replaying a seed reproduces every byte") {
    const std::string t1 = (scratch() / "t1.json").string();
    const std::string t2 = (scratch() / "t2.json").string();
    const Run a = run({"simulate", "--config", cfg, "--trace-out", t1});
    const Run b = run({"simulate", "--config", cfg, "--trace-out", t2});
    REQUIRE(a.code == kOk);
    CHECK(a.out == b.out);
    CHECK(slurp(t1) == slurp(t2));
    CHECK(slurp(t1).size() > 1000);
    const Json trace = Json::parse(slurp(t1));
    CHECK(trace["config"]["seed"] == 5);
    CHECK(trace["periods"].size() == 400);

    const Run c = run({"simulate", "--config", cfg, "--seed", "6"});
    CHECK(c.out != a.out);
  }

  SUBCASE("the analytic comparison appends the distance to the fixed point") {
    const Run r = run({"simulate", "--config", cfg, "--compare-analytic"});
    REQUIRE(r.code == kOk);
    const auto t = parse_csv(r.out);
    const auto plain = parse_csv(run({"simulate", "--config", cfg}).out);
    CHECK(t[0].size() == plain[0].size() + 2);
    CHECK(t[0][t[0].size() - 2] == "linf_eta");

    std::vector<double> eta_hat;
    std::stringstream ss(cell(t, 1, "eta_hat"));
    for (std::string v; std::getline(ss, v, ';');) eta_hat.push_back(std::stod(v));
    NetworkEnv<> env;
    env.c = 0.2;
    env.eps = 0.1;
    env.delta = 0.8;
    const Eigen::VectorXd eta = oracle::stationary(ProtocolParams<>::uniform(3, 1, 2), oracle::alpha(env, 2));
    double linf = 0;
    for (int k = 0; k <= 3; ++k) linf = std::max(linf, std::abs(eta_hat[k] - eta[k]));
    CHECK(std::stod(cell(t, 1, "linf_eta")) == doctest::Approx(linf).epsilon(1e-9));
    CHECK(linf < 0.02);
  }

  SUBCASE("a run far from stationarity exits with 4") {
    const Run r = run({"simulate", "--config", cfg, "--compare-analytic", "--n-periods", "2", "--window", "1"});
    CHECK(r.code == kNoConvergence);
    CHECK_FALSE(r.out.empty());
  }

  SUBCASE("tit-for-tat adds binary reputation columns") {
    const Run r = run({"simulate", "--config", cfg, "--flavor", "tft"});
    REQUIRE(r.code == kOk);
    const auto t = parse_csv(r.out);
    CHECK(cell(t, 1, "flavor") == "tft");
    CHECK(std::stod(cell(t, 1, "eta_0")) + std::stod(cell(t, 1, "eta_1")) == doctest::Approx(1.0));
    const auto norm = parse_csv(run({"simulate", "--config", cfg}).out);
    CHECK(std::find(norm[0].begin(), norm[0].end(), "eta_0") == norm[0].end());

    const Run mixed = run({"simulate", "--config", cfg, "--flavor", "tft", "--compare-analytic"});
    CHECK(mixed.code == kConfigError);
    CHECK(error_of(mixed)["field"] == "sim.compare_analytic");
  }

  SUBCASE("output goes to the named file") {
    const std::string path = (scratch() / "summary.csv").string();
    const Run r = run({"simulate", "--config", cfg, "--out", path});
    CHECK(r.code == kOk);
    CHECK(r.out.empty());
    CHECK(slurp(path) == run({"simulate", "--config", cfg}).out);
  }
}

TEST_CASE("protocol comparison rows") {
  CompareSpec spec;
  spec.env.eps = 0.1;
  spec.env.delta = 0.8;
  spec.env.p_C = 0.3;
  spec.c_r = {0.0, 0.95};
  spec.n_peers = 100;
  spec.n_periods = 100;
  spec.pairs = 10;
  const CompareResult result = compare_protocols(spec);

  // tft, the harsh norms h = 1..L, the designed norm when one exists, then the summary
  std::size_t at_zero = 0;
  for (const auto& row : result.rows) at_zero += row.c_r == 0.0;
  CHECK(at_zero == 1 + 3 + 1 + 1);
  CHECK(result.rows[at_zero - 1].protocol == "norm_best");
  CHECK(result.rows.back().protocol == "norm_best");
  for (const auto& row : result.rows)
    if (row.c_r == 0.0) CHECK(row.sustained);
  CHECK(result.tft_collapse == 0.95);
  CHECK(result.norm_collapse == 0.95);
  CHECK(compare_row(result.rows[0]).size() == compare_columns().size());
}
