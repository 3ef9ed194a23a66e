#include "normforge/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>

#include "normforge/parallel.hpp"

namespace normforge {

std::vector<std::string> compare_columns() {
  return {"c_r", "protocol", "h_o", "b", "beta", "sustained", "delivery_rate", "utility", "max_gain", "max_gain_se"};
}

std::vector<std::string> compare_row(const CompareRow& r) {
  const bool tft = r.protocol == "tft";
  return {format_number(r.c_r),
          r.protocol,
          tft ? "" : std::to_string(r.params.h_o),
          std::to_string(r.params.b),
          tft ? "" : format_number(r.params.beta),
          r.sustained ? "1" : "0",
          format_number(r.delivery_rate),
          format_number(r.utility),
          format_number(r.max_gain),
          format_number(r.max_gain_se)};
}

CompareResult compare_protocols(const CompareSpec& spec) {
  struct Task {
    std::size_t point;
    std::string protocol;
    ProtocolParams<> params;
    Flavor flavor;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < spec.c_r.size(); ++i) {
    NetworkEnv<> env = spec.env;
    env.c = spec.c_r[i] * env.r;
    tasks.push_back({i, "tft", ProtocolParams<>::uniform(1, 1, spec.b), Flavor::Tft});
    for (int h = 1; h <= spec.L; ++h)
      tasks.push_back({i, "norm_h" + std::to_string(h), ProtocolParams<>::uniform(spec.L, h, spec.b), Flavor::SocialNorm});
    DesignSpec design;
    design.problem = Problem::OsneVp;
    design.L = spec.L;
    design.b_cap = spec.b;
    design.beta_grid = spec.beta_grid;
    design.env = env;
    const DesignResult best = solve(design);
    if (best.feasible) tasks.push_back({i, "norm_designed", best.params, Flavor::SocialNorm});
  }

  std::vector<CompareRow> rows(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t k) {
    const Task& t = tasks[k];
    NetworkEnv<> env = spec.env;
    env.c = spec.c_r[t.point] * env.r;
    SimConfig cfg = SimConfig::from_env(t.params, env, spec.n_peers, spec.n_periods, spec.seed);
    cfg.flavor = t.flavor;
    DeviationOptions opt;
    opt.pairs = spec.pairs;
    opt.parallel = false;
    const CooperationReport rep = assess_cooperation(cfg, opt);
    CompareRow& row = rows[k];
    row.c_r = spec.c_r[t.point];
    row.protocol = t.protocol;
    row.params = t.params;
    row.sustained = rep.sustained;
    row.delivery_rate = rep.delivery_rate;
    row.utility = rep.reciprocative_utility;
    row.max_gain = -std::numeric_limits<double>::infinity();
    for (const auto& g : rep.gains)
      if (g.mean > row.max_gain) {
        row.max_gain = g.mean;
        row.max_gain_se = g.std_error;
      }
  });

  CompareResult out;
  for (std::size_t i = 0; i < spec.c_r.size(); ++i) {
    const CompareRow* best = nullptr;
    const CompareRow* tft = nullptr;
    const CompareRow* fallback = nullptr;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      if (tasks[k].point != i) continue;
      out.rows.push_back(rows[k]);
      const CompareRow& r = rows[k];
      if (r.protocol == "tft") {
        tft = &r;
        continue;
      }
      if (!fallback || r.max_gain < fallback->max_gain) fallback = &r;
      if (r.sustained && (!best || r.utility > best->utility)) best = &r;
    }
    CompareRow summary = best ? *best : *fallback;
    summary.protocol = "norm_best";
    out.rows.push_back(summary);
    if (!tft->sustained && !out.tft_collapse) out.tft_collapse = spec.c_r[i];
    if (!best && !out.norm_collapse) out.norm_collapse = spec.c_r[i];
  }
  return out;
}

namespace {

struct Flags {
  std::string config;
  std::optional<double> r, c, eps, lambda, delta, p_C, p_D, beta;
  std::optional<int> L, h_o, b, b_cap;
  std::vector<int> m_o;
  std::optional<std::string> problem, flavor, format;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_peers, n_periods, window, pairs;
  bool compare_analytic = false;
  std::string out, log_out, trace_out;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "scenario JSON file");
  cmd->add_option("--r", f.r, "benefit per chunk");
  cmd->add_option("--c", f.c, "cost per uploaded chunk");
  cmd->add_option("--eps", f.eps, "service-error probability");
  cmd->add_option("--lambda", f.lambda, "connection utilization per period");
  cmd->add_option("--delta", f.delta, "discount factor");
  cmd->add_option("--p-c", f.p_C, "altruistic fraction");
  cmd->add_option("--p-d", f.p_D, "malicious fraction");
  cmd->add_option("--L", f.L, "maximum reputation");
  cmd->add_option("--h-o", f.h_o, "service threshold");
  cmd->add_option("--m-o", f.m_o, "client thresholds for levels h_o..L");
  cmd->add_option("--beta", f.beta, "forgiveness base");
  cmd->add_option("--b", f.b, "connections");
  cmd->add_option("--format", f.format, "json or csv");
  cmd->add_option("--out", f.out, "output file (stdout when absent)");
}

void add_design(CLI::App* cmd, Flags& f) {
  cmd->add_option("--problem", f.problem, "osne | osne_vp | osne_vps | osne_ah");
  cmd->add_option("--b-cap", f.b_cap, "largest b searched");
}

void add_sim(CLI::App* cmd, Flags& f) {
  cmd->add_option("--seed", f.seed, "simulation seed");
  cmd->add_option("--n-peers", f.n_peers, "population size");
  cmd->add_option("--n-periods", f.n_periods, "periods simulated");
  cmd->add_option("--window", f.window, "final periods averaged");
  cmd->add_option("--flavor", f.flavor, "social_norm or tft");
  cmd->add_option("--pairs", f.pairs, "seed pairs per deviation estimate");
}

// Flags override the scenario file field by field.
Scenario build_scenario(const Flags& f) {
  Scenario s = f.config.empty() ? Scenario{} : load_scenario(f.config);
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(s.env.r, f.r);
  set(s.env.c, f.c);
  set(s.env.eps, f.eps);
  set(s.env.lambda, f.lambda);
  set(s.env.delta, f.delta);
  set(s.env.p_C, f.p_C);
  set(s.env.p_D, f.p_D);
  s.env.validate();

  if (f.L || f.h_o || f.b || f.beta || !f.m_o.empty()) {
    ProtocolParams<> p = s.params.value_or(ProtocolParams<>{});
    const int L = f.L.value_or(p.L);
    const int h = f.h_o.value_or(std::min(p.h_o, L));
    if (L < 1) throw InvalidParameter("params.L", "must be >= 1");
    if (h < 1 || h > L) throw InvalidParameter("params.h_o", "must lie in [1, L]");
    VectorXi m = (L == p.L && h == p.h_o) ? p.m_o : VectorXi::Constant(L - h + 1, h);
    if (!f.m_o.empty()) m = Eigen::Map<const VectorXi>(f.m_o.data(), static_cast<Eigen::Index>(f.m_o.size()));
    p = ProtocolParams<>::with_thresholds(L, h, m, f.b.value_or(p.b), f.beta.value_or(p.beta));
    s.params = p;
  }
  if (f.problem || f.b_cap) {
    DesignSpec d = s.design.value_or(DesignSpec{});
    if (f.problem) {
      const auto parsed = problem_from_string(*f.problem);
      if (!parsed) throw InvalidParameter("design.problem", "must be one of osne, osne_vp, osne_vps, osne_ah");
      d.problem = *parsed;
    }
    set(d.b_cap, f.b_cap);
    if (f.L) d.L = *f.L;
    s.design = d;
  } else if (s.design && f.L) {
    s.design->L = *f.L;
  }
  if (s.design) {
    s.design->env = s.env;
    s.design->validate();
  }

  if (f.seed || f.n_peers || f.n_periods || f.window || f.flavor || f.pairs || f.compare_analytic) {
    SimSettings sim = s.sim.value_or(SimSettings{});
    set(sim.seed, f.seed);
    set(sim.n_peers, f.n_peers);
    set(sim.n_periods, f.n_periods);
    set(sim.window, f.window);
    set(sim.pairs, f.pairs);
    if (f.flavor) {
      if (*f.flavor == "tft")
        sim.flavor = Flavor::Tft;
      else if (*f.flavor == "social_norm")
        sim.flavor = Flavor::SocialNorm;
      else
        throw InvalidParameter("sim.flavor", "must be social_norm or tft");
    }
    sim.compare_analytic = sim.compare_analytic || f.compare_analytic;
    s.sim = sim;
  }
  if (f.format) {
    if (*f.format != "json" && *f.format != "csv") throw InvalidParameter("output.format", "must be json or csv");
    s.output.format = *f.format;
  }
  if (!f.out.empty()) s.output.path = f.out;
  return s;
}

void emit(const Scenario& s, std::ostream& out, const std::string& text) {
  if (s.output.path.empty()) {
    out << text;
    return;
  }
  std::ofstream file(s.output.path);
  if (!file) throw InvalidParameter("output.path", "cannot write " + s.output.path);
  file << text;
}

void write_file(const std::string& path, const std::string& field, const std::string& text) {
  std::ofstream file(path);
  if (!file) throw InvalidParameter(field, "cannot write " + path);
  file << text;
}

const ProtocolParams<>& need_params(const Scenario& s) {
  if (!s.params) throw InvalidParameter("params", "this command needs concrete params");
  return *s.params;
}

const DesignSpec& need_design(const Scenario& s) {
  if (!s.design) throw InvalidParameter("design", "this command needs a design spec");
  return *s.design;
}

bool csv(const Scenario& s) { return s.output.format == "csv"; }

int cmd_analyze(const Scenario& s, std::ostream& out) {
  const AnalysisReport report = analyze(need_params(s), s.env);
  if (csv(s))
    emit(s, out, CsvTable{analysis_columns(), {analysis_row(report)}}.str());
  else
    emit(s, out, to_json(report).dump(2) + "\n");
  return kOk;
}

int cmd_check(const Scenario& s, std::ostream& out) {
  const auto& p = need_params(s);
  p.validate();
  const IncentiveReport<> rep = check_equilibrium(p, s.env);
  if (csv(s)) {
    CsvTable t{{"is_equilibrium", "serve_slack", "refuse_slack", "serve_margin", "per_theta_slacks"}, {}};
    std::string slacks;
    for (Eigen::Index i = 0; i < rep.per_theta_slacks.size(); ++i)
      slacks += (i ? ";" : "") + format_number(rep.per_theta_slacks[i]);
    t.rows.push_back({rep.is_equilibrium ? "1" : "0", format_number(rep.serve_slack),
                      format_number(rep.refuse_slack), format_number(rep.serve_margin), slacks});
    emit(s, out, t.str());
  } else {
    Json j = {{"is_equilibrium", rep.is_equilibrium},
              {"serve_slack", rep.serve_slack},
              {"refuse_slack", rep.refuse_slack},
              {"serve_margin", rep.serve_margin},
              {"per_theta_slacks",
               std::vector<double>(rep.per_theta_slacks.data(),
                                   rep.per_theta_slacks.data() + rep.per_theta_slacks.size())}};
    emit(s, out, j.dump(2) + "\n");
  }
  return rep.is_equilibrium ? kOk : kInfeasible;
}

int cmd_solve(const Scenario& s, const Flags& f, std::ostream& out) {
  const DesignSpec& spec = need_design(s);
  const DesignResult result = solve(spec);
  if (!f.log_out.empty())
    write_file(f.log_out, "log_out", CsvTable{search_log_columns(), search_log_rows(result)}.str());
  if (csv(s))
    emit(s, out, CsvTable{solve_columns(spec.problem), {solve_row(result, spec)}}.str());
  else
    emit(s, out, to_json(result, spec.problem).dump(2) + "\n");
  return result.feasible ? kOk : kInfeasible;
}

int cmd_sweep(const Scenario& s, std::ostream& out) {
  if (s.sweep.empty()) throw InvalidParameter("sweep", "needs at least one axis");
  const std::vector<Scenario> points = sweep_points(s);
  const bool design = s.design.has_value();
  if (!design) need_params(s);

  std::vector<std::vector<std::string>> rows(points.size());
  std::vector<Json> objects(points.size());
  auto one = [&](std::size_t i) {
    if (design) {
      const DesignResult r = solve(*points[i].design);
      rows[i] = solve_row(r, *points[i].design);
      objects[i] = to_json(r, points[i].design->problem);
      objects[i]["env"] = to_json(points[i].env);
      objects[i].erase("search_log");
    } else {
      const AnalysisReport r = analyze(*points[i].params, points[i].env);
      rows[i] = analysis_row(r);
      objects[i] = to_json(r);
    }
    rows[i].insert(rows[i].begin(), std::to_string(i));
  };
  // designer runs are already parallel inside
  if (design)
    for (std::size_t i = 0; i < points.size(); ++i) one(i);
  else
    parallel_for(points.size(), one);

  if (csv(s)) {
    std::vector<std::string> header = design ? solve_columns(s.design->problem) : analysis_columns();
    header.insert(header.begin(), "point");
    emit(s, out, CsvTable{header, rows}.str());
  } else {
    emit(s, out, Json(objects).dump(2) + "\n");
  }
  return kOk;
}

int cmd_simulate(const Scenario& s, const Flags& f, std::ostream& out) {
  const SimSettings settings = s.sim.value_or(SimSettings{});
  SimConfig cfg;
  if (settings.flavor == Flavor::Tft)
    cfg = SimConfig::from_env(ProtocolParams<>::uniform(1, 1, s.params ? s.params->b : 1), s.env,
                              settings.n_peers, settings.n_periods, settings.seed);
  else
    cfg = SimConfig::from_env(need_params(s), s.env, settings.n_peers, settings.n_periods, settings.seed);
  cfg.flavor = settings.flavor;
  cfg.window = settings.window;

  std::optional<ReputationDistribution<>> analytic;
  if (settings.compare_analytic) {
    if (settings.flavor == Flavor::Tft)
      throw InvalidParameter("sim.compare_analytic", "no analytic distribution for the tft flavor");
    analytic = stationary(cfg.params, s.env);
  }
  const SimTrace trace = run_sim(cfg);
  if (!f.trace_out.empty()) write_file(f.trace_out, "trace_out", to_json(trace).dump() + "\n");

  if (csv(s)) {
    emit(s, out, CsvTable{sim_columns(settings.flavor, settings.compare_analytic), {sim_row(trace, analytic)}}.str());
  } else {
    const auto cols = sim_columns(settings.flavor, settings.compare_analytic);
    const auto row = sim_row(trace, analytic);
    Json j = Json::object();
    for (std::size_t i = 0; i < cols.size(); ++i) j[cols[i]] = row[i];
    j["summary"] = to_json(trace)["summary"];
    emit(s, out, j.dump(2) + "\n");
  }
  if (analytic) {
    const double linf = (trace.eta_window - analytic->eta).cwiseAbs().maxCoeff();
    const double tol = std::max(0.02, 3.0 * std::sqrt(double(cfg.params.L) / cfg.n_peers));
    if (linf > tol) return kNoConvergence;
  }
  return kOk;
}

int cmd_compare(const Scenario& s, std::ostream& out) {
  CompareSpec spec;
  spec.env = s.env;
  if (s.design) {
    spec.L = s.design->L;
    spec.b = s.design->b_cap;
    spec.beta_grid = s.design->beta_grid;
  }
  if (s.params) spec.b = s.params->b;
  const SimSettings settings = s.sim.value_or(SimSettings{200, 200, 1, Flavor::SocialNorm, 0, false, 20});
  spec.n_peers = settings.n_peers;
  spec.n_periods = settings.n_periods;
  spec.seed = settings.seed;
  spec.pairs = settings.pairs;
  if (s.sweep.empty()) {
    spec.c_r = SweepAxis{"c_r", 0.05, 0.95, 0.05}.values();
  } else {
    if (s.sweep.size() != 1 || s.sweep[0].name != "c_r")
      throw InvalidParameter("sweep", "compare takes a single c_r axis");
    spec.c_r = s.sweep[0].values();
  }
  for (double v : spec.c_r)
    if (!(v >= 0 && v < 1)) throw InvalidParameter("sweep[0]", "c_r values must lie in [0, 1)");

  const CompareResult result = compare_protocols(spec);
  if (csv(s)) {
    CsvTable t{compare_columns(), {}};
    for (const auto& r : result.rows) t.rows.push_back(compare_row(r));
    emit(s, out, t.str());
  } else {
    Json rows = Json::array();
    const auto cols = compare_columns();
    for (const auto& r : result.rows) {
      const auto cells = compare_row(r);
      Json j = Json::object();
      for (std::size_t i = 0; i < cols.size(); ++i) j[cols[i]] = cells[i];
      rows.push_back(j);
    }
    Json j = {{"tft_collapse", result.tft_collapse ? Json(*result.tft_collapse) : Json(nullptr)},
              {"norm_collapse", result.norm_collapse ? Json(*result.norm_collapse) : Json(nullptr)},
              {"rows", rows}};
    emit(s, out, j.dump(2) + "\n");
  }
  return kOk;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& field, const std::string& message) {
  Json j = {{"error", {{"kind", kind}, {"field", field}, {"message", message}}}};
  err << j.dump() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reputation-based incentive protocol toolkit and simulator", "normforge"};
  app.require_subcommand(1);
  Flags f;
  auto* analyze_cmd = app.add_subcommand("analyze", "stationary distribution, utilities and incentive slacks");
  auto* check_cmd = app.add_subcommand("check", "equilibrium verdict for concrete params");
  auto* solve_cmd = app.add_subcommand("solve", "optimal sustainable protocol");
  auto* sweep_cmd = app.add_subcommand("sweep", "analyze or solve over a parameter grid");
  auto* simulate_cmd = app.add_subcommand("simulate", "agent-based simulation");
  auto* compare_cmd = app.add_subcommand("compare", "tit-for-tat against social norms over c/r");
  for (auto* cmd : {analyze_cmd, check_cmd, solve_cmd, sweep_cmd, simulate_cmd, compare_cmd}) add_common(cmd, f);
  for (auto* cmd : {solve_cmd, sweep_cmd, compare_cmd}) add_design(cmd, f);
  for (auto* cmd : {simulate_cmd, compare_cmd}) add_sim(cmd, f);
  solve_cmd->add_option("--log-out", f.log_out, "search log CSV");
  simulate_cmd->add_option("--trace-out", f.trace_out, "full trace JSON");
  simulate_cmd->add_flag("--compare-analytic", f.compare_analytic, "append the distance to the analytic distribution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::smatch m;
    const std::string what = e.what();
    const std::string field = std::regex_search(what, m, std::regex("--[A-Za-z-]+")) ? m.str() : "arguments";
    report_error(err, "config", field, what);
    return kConfigError;
  }

  try {
    const Scenario s = build_scenario(f);
    if (*analyze_cmd) return cmd_analyze(s, out);
    if (*check_cmd) return cmd_check(s, out);
    if (*solve_cmd) return cmd_solve(s, f, out);
    if (*sweep_cmd) return cmd_sweep(s, out);
    if (*simulate_cmd) return cmd_simulate(s, f, out);
    if (*compare_cmd) return cmd_compare(s, out);
  } catch (const InvalidParameter& e) {
    report_error(err, "config", e.field(), e.what());
    return kConfigError;
  } catch (const ConvergenceError& e) {
    report_error(err, "convergence", "stationary", e.what());
    return kNoConvergence;
  } catch (const std::exception& e) {
    report_error(err, "internal", "", e.what());
    return kInternal;
  }
  return kInternal;
}

}  // namespace normforge
