#include "normforge/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace normforge {

namespace {

using nlohmann::json;

std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void reject_unknown(const Json& obj, const std::string& path, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw InvalidParameter(path.empty() ? "config" : path, "must be an object");
  for (const auto& item : obj.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; });
    if (!ok) throw InvalidParameter(join_path(path, item.key()), "unknown field");
  }
}

template <typename T>
void read(const Json& obj, const char* key, const std::string& path, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string field = join_path(path, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw InvalidParameter(field, "must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) throw InvalidParameter(field, "must be an integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) throw InvalidParameter(field, "must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw InvalidParameter(field, "must be a string");
  }
  try {
    out = it->template get<T>();
  } catch (const json::exception&) {
    throw InvalidParameter(field, "is out of range");
  }
}

NetworkEnv<> parse_env(const Json& j) {
  reject_unknown(j, "env", {"r", "c", "eps", "lambda", "delta", "p_C", "p_D"});
  NetworkEnv<> env;
  read(j, "r", "env", env.r);
  read(j, "c", "env", env.c);
  read(j, "eps", "env", env.eps);
  read(j, "lambda", "env", env.lambda);
  read(j, "delta", "env", env.delta);
  read(j, "p_C", "env", env.p_C);
  read(j, "p_D", "env", env.p_D);
  env.validate();
  return env;
}

ProtocolParams<> parse_params(const Json& j) {
  reject_unknown(j, "params", {"L", "h_o", "m_o", "beta", "b"});
  ProtocolParams<> p;
  read(j, "L", "params", p.L);
  read(j, "h_o", "params", p.h_o);
  read(j, "beta", "params", p.beta);
  read(j, "b", "params", p.b);
  if (p.L < 1) throw InvalidParameter("params.L", "must be >= 1");
  if (p.h_o < 1 || p.h_o > p.L) throw InvalidParameter("params.h_o", "must lie in [1, L]");
  if (const auto it = j.find("m_o"); it != j.end()) {
    if (!it->is_array()) throw InvalidParameter("params.m_o", "must be an array of integers");
    p.m_o.resize(static_cast<Eigen::Index>(it->size()));
    for (std::size_t i = 0; i < it->size(); ++i) {
      if (!(*it)[i].is_number_integer()) throw InvalidParameter("params.m_o", "must be an array of integers");
      p.m_o[static_cast<Eigen::Index>(i)] = (*it)[i].get<int>();
    }
  } else {
    p.m_o = VectorXi::Constant(p.L - p.h_o + 1, p.h_o);
  }
  p.validate();
  return p;
}

DesignSpec parse_design(const Json& j, const NetworkEnv<>& env) {
  reject_unknown(j, "design", {"problem", "L", "b_cap", "beta_grid", "pc_grid", "pc_max", "refine_beta",
                               "literal_table", "full_thresholds"});
  DesignSpec d;
  std::string problem = to_string(d.problem);
  read(j, "problem", "design", problem);
  const auto parsed = problem_from_string(problem);
  if (!parsed) throw InvalidParameter("design.problem", "must be one of osne, osne_vp, osne_vps, osne_ah");
  d.problem = *parsed;
  read(j, "L", "design", d.L);
  read(j, "b_cap", "design", d.b_cap);
  read(j, "beta_grid", "design", d.beta_grid);
  read(j, "pc_grid", "design", d.pc_grid);
  read(j, "pc_max", "design", d.pc_max);
  read(j, "refine_beta", "design", d.refine_beta);
  read(j, "literal_table", "design", d.literal_table);
  if (const auto it = j.find("full_thresholds"); it != j.end() && !it->is_null()) {
    bool v = false;
    read(j, "full_thresholds", "design", v);
    d.full_thresholds = v;
  }
  d.env = env;
  d.validate();
  return d;
}

SweepAxis parse_axis(const Json& j, std::size_t index) {
  const std::string path = "sweep[" + std::to_string(index) + "]";
  reject_unknown(j, path, {"name", "min", "max", "step"});
  SweepAxis a;
  read(j, "name", path, a.name);
  read(j, "min", path, a.min);
  read(j, "max", path, a.max);
  read(j, "step", path, a.step);
  const auto& names = sweep_parameters();
  if (std::find(names.begin(), names.end(), a.name) == names.end())
    throw InvalidParameter(path + ".name", "unknown parameter '" + a.name + "'");
  if (!(a.step > 0)) throw InvalidParameter(path + ".step", "must be > 0");
  if (!(a.max >= a.min)) throw InvalidParameter(path + ".max", "must be >= min");
  return a;
}

SimSettings parse_sim(const Json& j) {
  reject_unknown(j, "sim", {"n_peers", "n_periods", "seed", "flavor", "window", "compare_analytic", "pairs"});
  SimSettings s;
  read(j, "n_peers", "sim", s.n_peers);
  read(j, "n_periods", "sim", s.n_periods);
  read(j, "seed", "sim", s.seed);
  std::string flavor = to_string(s.flavor);
  read(j, "flavor", "sim", flavor);
  if (flavor == "social_norm")
    s.flavor = Flavor::SocialNorm;
  else if (flavor == "tft")
    s.flavor = Flavor::Tft;
  else
    throw InvalidParameter("sim.flavor", "must be social_norm or tft");
  read(j, "window", "sim", s.window);
  read(j, "compare_analytic", "sim", s.compare_analytic);
  read(j, "pairs", "sim", s.pairs);
  if (s.n_peers < 2) throw InvalidParameter("sim.n_peers", "must be >= 2");
  if (s.n_periods < 1) throw InvalidParameter("sim.n_periods", "must be >= 1");
  if (s.window < 0 || s.window > s.n_periods) throw InvalidParameter("sim.window", "must lie in [0, n_periods]");
  if (s.pairs < 2) throw InvalidParameter("sim.pairs", "must be >= 2");
  return s;
}

Json vector_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Json vector_json(const Eigen::VectorXi& v) { return Json(std::vector<int>(v.data(), v.data() + v.size())); }

template <typename V>
std::string joined(const V& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    if constexpr (std::is_integral_v<typename V::Scalar>)
      out += std::to_string(v[i]);
    else
      out += format_number(v[i]);
  }
  return out;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> env_cells(const NetworkEnv<>& e) {
  return {format_number(e.r),     format_number(e.c),     format_number(e.eps), format_number(e.lambda),
          format_number(e.delta), format_number(e.p_C), format_number(e.p_D)};
}

const std::vector<std::string> kEnvColumns = {"r", "c", "eps", "lambda", "delta", "p_C", "p_D"};

Json counts_json(const TransactionCounts& c) {
  return {{"requests", c.requests}, {"served", c.served}, {"errored", c.errored},
          {"unserved", c.unserved}, {"refused", c.refused}};
}

Json kinds_json(const std::array<double, kKinds>& u) {
  Json j = Json::object();
  for (std::size_t k = 0; k < kKinds; ++k) j[to_string(static_cast<PeerKind>(k))] = u[k];
  return j;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<double> SweepAxis::values() const {
  std::vector<double> out;
  const long n = static_cast<long>(std::floor((max - min) / step + 1e-9));
  // snap to 12 decimals so 0.1 * 3 prints as 0.3
  for (long i = 0; i <= n; ++i) out.push_back(std::round((min + static_cast<double>(i) * step) * 1e12) / 1e12);
  return out;
}

const std::vector<std::string>& sweep_parameters() {
  static const std::vector<std::string> names = {"r",   "c",   "c_r", "eps",  "lambda", "delta", "p_C",
                                                 "p_D", "L",   "h_o", "b",    "beta",   "b_cap"};
  return names;
}

Scenario parse_scenario(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidParameter("config", std::string("malformed JSON: ") + e.what());
  }
  reject_unknown(j, "", {"env", "params", "design", "sweep", "sim", "output"});
  Scenario s;
  if (j.contains("env")) s.env = parse_env(j["env"]);
  if (j.contains("params")) s.params = parse_params(j["params"]);
  if (j.contains("design")) s.design = parse_design(j["design"], s.env);
  if (j.contains("sweep")) {
    if (!j["sweep"].is_array()) throw InvalidParameter("sweep", "must be an array of axes");
    for (std::size_t i = 0; i < j["sweep"].size(); ++i) s.sweep.push_back(parse_axis(j["sweep"][i], i));
  }
  if (j.contains("sim")) s.sim = parse_sim(j["sim"]);
  if (j.contains("output")) {
    const auto& o = j["output"];
    reject_unknown(o, "output", {"path", "format"});
    read(o, "path", "output", s.output.path);
    read(o, "format", "output", s.output.format);
    if (s.output.format != "json" && s.output.format != "csv")
      throw InvalidParameter("output.format", "must be json or csv");
  }
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidParameter("config", "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

Json to_json(const NetworkEnv<>& e) {
  return {{"r", e.r},         {"c", e.c},     {"eps", e.eps}, {"lambda", e.lambda},
          {"delta", e.delta}, {"p_C", e.p_C}, {"p_D", e.p_D}};
}

Json to_json(const ProtocolParams<>& p) {
  return {{"L", p.L}, {"h_o", p.h_o}, {"m_o", vector_json(p.m_o)}, {"beta", p.beta}, {"b", p.b}};
}

Json to_json(const DesignSpec& d) {
  Json j = {{"problem", to_string(d.problem)},
            {"L", d.L},
            {"b_cap", d.b_cap},
            {"beta_grid", d.beta_grid},
            {"pc_grid", d.pc_grid},
            {"pc_max", d.pc_max},
            {"refine_beta", d.refine_beta},
            {"literal_table", d.literal_table}};
  j["full_thresholds"] = d.full_thresholds ? Json(*d.full_thresholds) : Json(nullptr);
  return j;
}

Json to_json(const Scenario& s) {
  Json j;
  j["env"] = to_json(s.env);
  if (s.params) j["params"] = to_json(*s.params);
  if (s.design) j["design"] = to_json(*s.design);
  if (!s.sweep.empty()) {
    j["sweep"] = Json::array();
    for (const auto& a : s.sweep) j["sweep"].push_back({{"name", a.name}, {"min", a.min}, {"max", a.max}, {"step", a.step}});
  }
  if (s.sim) {
    j["sim"] = {{"n_peers", s.sim->n_peers},   {"n_periods", s.sim->n_periods},
                {"seed", s.sim->seed},         {"flavor", to_string(s.sim->flavor)},
                {"window", s.sim->window},     {"compare_analytic", s.sim->compare_analytic},
                {"pairs", s.sim->pairs}};
  }
  j["output"] = {{"path", s.output.path}, {"format", s.output.format}};
  return j;
}

Scenario with_parameter(Scenario s, const std::string& name, double value) {
  auto need_params = [&]() -> ProtocolParams<>& {
    if (!s.params) throw InvalidParameter("sweep." + name, "needs params in the scenario");
    return *s.params;
  };
  auto as_int = [&](double v) {
    const double r = std::round(v);
    if (std::abs(r - v) > 1e-9) throw InvalidParameter("sweep." + name, "takes integer values");
    return static_cast<int>(r);
  };
  if (name == "r") s.env.r = value;
  else if (name == "c") s.env.c = value;
  else if (name == "c_r") s.env.c = value * s.env.r;
  else if (name == "eps") s.env.eps = value;
  else if (name == "lambda") s.env.lambda = value;
  else if (name == "delta") s.env.delta = value;
  else if (name == "p_C") s.env.p_C = value;
  else if (name == "p_D") s.env.p_D = value;
  else if (name == "L") {
    if (!s.params && !s.design) throw InvalidParameter("sweep.L", "needs params or design in the scenario");
    if (s.params) *s.params = ProtocolParams<>::uniform(as_int(value), std::min(s.params->h_o, as_int(value)), s.params->b, s.params->beta);
    if (s.design) s.design->L = as_int(value);
  } else if (name == "h_o") {
    auto& p = need_params();
    p = ProtocolParams<>::uniform(p.L, as_int(value), p.b, p.beta);
  } else if (name == "b") need_params().b = as_int(value);
  else if (name == "beta") need_params().beta = value;
  else if (name == "b_cap") {
    if (!s.design) throw InvalidParameter("sweep.b_cap", "needs design in the scenario");
    s.design->b_cap = as_int(value);
  } else {
    throw InvalidParameter("sweep." + name, "unknown parameter");
  }
  s.env.validate();
  if (s.params) s.params->validate();
  if (s.design) {
    s.design->env = s.env;
    s.design->validate();
  }
  return s;
}

std::vector<Scenario> sweep_points(const Scenario& s) {
  std::vector<Scenario> points = {s};
  for (const auto& axis : s.sweep) {
    std::vector<Scenario> next;
    for (const auto& base : points)
      for (double v : axis.values()) next.push_back(with_parameter(base, axis.name, v));
    points = std::move(next);
  }
  return points;
}

AnalysisReport analyze(const ProtocolParams<>& params, const NetworkEnv<>& env) {
  params.validate();
  env.validate();
  AnalysisReport r;
  r.params = params;
  r.env = env;
  r.dist = stationary(params, env);
  r.utilities = overall_utilities(params, env, r.dist);
  r.incentives = check_equilibrium(params, env, r.utilities);
  return r;
}

Json to_json(const AnalysisReport& r) {
  return {{"params", to_json(r.params)},
          {"env", to_json(r.env)},
          {"eta", vector_json(r.dist.eta)},
          {"mu", r.dist.mu},
          {"alpha", r.dist.alpha},
          {"v_one", vector_json(r.utilities.v_one)},
          {"v_inf", vector_json(r.utilities.v_inf)},
          {"U", r.utilities.social_utility},
          {"serve_slack", r.incentives.serve_slack},
          {"refuse_slack", r.incentives.refuse_slack},
          {"serve_margin", r.incentives.serve_margin},
          {"per_theta_slacks", vector_json(r.incentives.per_theta_slacks)},
          {"is_equilibrium", r.incentives.is_equilibrium}};
}

Json to_json(const DesignResult& r, Problem problem) {
  Json j = {{"problem", to_string(problem)},
            {"params", to_json(r.params)},
            {"utility", r.utility},
            {"feasible", r.feasible},
            {"reciprocity_sustained", r.reciprocity_sustained}};
  if (problem == Problem::OsneAh) j["p_C_star"] = r.pC_star;
  j["search_log"] = Json::array();
  for (const auto& e : r.search_log)
    j["search_log"].push_back({{"params", to_json(e.candidate)},
                               {"p_C", e.p_C},
                               {"slack", e.slack},
                               {"utility", e.utility},
                               {"feasible", e.feasible}});
  return j;
}

Json to_json(const SimTrace& t) {
  const SimConfig& c = t.config;
  Json config = {{"n_peers", c.n_peers},
                 {"n_periods", c.n_periods},
                 {"seed", c.seed},
                 {"flavor", to_string(c.flavor)},
                 {"window", c.summary_window()},
                 {"discount_from", c.discount_from},
                 {"params", to_json(c.params)},
                 {"env", to_json(c.env)},
                 {"mix",
                  {{"reciprocative", c.mix.reciprocative},
                   {"altruistic", c.mix.altruistic},
                   {"malicious", c.mix.malicious}}}};
  Json periods = Json::array();
  for (std::size_t i = 0; i < t.periods.size(); ++i) {
    const auto& p = t.periods[i];
    periods.push_back({{"t", i},
                       {"eta", vector_json(p.eta)},
                       {"kind_utility", kinds_json(p.kind_utility)},
                       {"active_utility", p.active_utility},
                       {"active_count", p.active_count},
                       {"max_seed_uploads", p.max_seed_uploads},
                       {"counts", counts_json(p.counts)}});
  }
  Json summary = {{"eta_window", vector_json(t.eta_window)},
                  {"mu_window", t.mu_window},
                  {"utility_window", kinds_json(t.utility_window)},
                  {"active_utility_window", t.active_utility_window},
                  {"active_utility_se", t.active_utility_se},
                  {"delivery_rate", t.delivery_rate},
                  {"truncation_bound", t.truncation_bound},
                  {"totals", counts_json(t.totals)}};
  return {{"config", config},
          {"periods", periods},
          {"final_reputation", vector_json(t.final_reputation)},
          {"discounted", vector_json(t.discounted)},
          {"summary", summary}};
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_cell(cells[i]);
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

std::vector<std::string> analysis_columns() {
  std::vector<std::string> cols = {"L", "h_o", "b", "beta", "m_o"};
  cols.insert(cols.end(), kEnvColumns.begin(), kEnvColumns.end());
  for (const char* c : {"mu", "alpha", "U", "serve_slack", "refuse_slack", "serve_margin", "is_equilibrium", "eta",
                        "v_one", "v_inf", "per_theta_slacks"})
    cols.emplace_back(c);
  return cols;
}

std::vector<std::string> analysis_row(const AnalysisReport& r) {
  const auto& p = r.params;
  std::vector<std::string> row = {std::to_string(p.L), std::to_string(p.h_o), std::to_string(p.b),
                                  format_number(p.beta), joined(p.m_o)};
  const auto env = env_cells(r.env);
  row.insert(row.end(), env.begin(), env.end());
  for (double v : {r.dist.mu, r.dist.alpha, r.utilities.social_utility, r.incentives.serve_slack,
                   r.incentives.refuse_slack, r.incentives.serve_margin})
    row.push_back(format_number(v));
  row.push_back(r.incentives.is_equilibrium ? "1" : "0");
  row.push_back(joined(r.dist.eta));
  row.push_back(joined(r.utilities.v_one));
  row.push_back(joined(r.utilities.v_inf));
  row.push_back(joined(r.incentives.per_theta_slacks));
  return row;
}

std::vector<std::string> solve_columns(Problem problem) {
  std::vector<std::string> cols = {"problem", "L", "h_o", "b", "beta", "m_o"};
  if (problem == Problem::OsneAh) cols.emplace_back("p_C_star");
  for (const char* c : {"utility", "feasible", "reciprocity_sustained", "evaluated"}) cols.emplace_back(c);
  cols.insert(cols.end(), kEnvColumns.begin(), kEnvColumns.end());
  return cols;
}

std::vector<std::string> solve_row(const DesignResult& r, const DesignSpec& spec) {
  const auto& p = r.params;
  std::vector<std::string> row = {to_string(spec.problem), std::to_string(p.L),    std::to_string(p.h_o),
                                  std::to_string(p.b),     format_number(p.beta), joined(p.m_o)};
  if (spec.problem == Problem::OsneAh) row.push_back(format_number(r.pC_star));
  row.push_back(format_number(r.utility));
  row.push_back(r.feasible ? "1" : "0");
  row.push_back(r.reciprocity_sustained ? "1" : "0");
  row.push_back(std::to_string(r.search_log.size()));
  const auto env = env_cells(spec.env);
  row.insert(row.end(), env.begin(), env.end());
  return row;
}

std::vector<std::string> search_log_columns() {
  return {"index", "L", "h_o", "b", "beta", "m_o", "p_C", "slack", "utility", "feasible"};
}

std::vector<std::vector<std::string>> search_log_rows(const DesignResult& r) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < r.search_log.size(); ++i) {
    const auto& e = r.search_log[i];
    const auto& p = e.candidate;
    rows.push_back({std::to_string(i), std::to_string(p.L), std::to_string(p.h_o), std::to_string(p.b),
                    format_number(p.beta), joined(p.m_o), format_number(e.p_C), format_number(e.slack),
                    format_number(e.utility), e.feasible ? "1" : "0"});
  }
  return rows;
}

std::vector<std::string> sim_columns(Flavor flavor, bool compare_analytic) {
  std::vector<std::string> cols = {"flavor",        "n_peers",   "n_periods", "seed",     "window",
                                   "mu_hat",        "active_utility", "active_utility_se", "delivery_rate",
                                   "requests",      "served",    "errored",   "unserved", "refused",
                                   "truncation_bound", "eta_hat"};
  if (flavor == Flavor::Tft) {
    cols.emplace_back("eta_0");
    cols.emplace_back("eta_1");
  }
  if (compare_analytic) {
    cols.emplace_back("linf_eta");
    cols.emplace_back("mu_analytic");
  }
  return cols;
}

std::vector<std::string> sim_row(const SimTrace& t, const std::optional<ReputationDistribution<>>& analytic) {
  const auto& c = t.config;
  std::vector<std::string> row = {to_string(c.flavor),
                                  std::to_string(c.n_peers),
                                  std::to_string(c.n_periods),
                                  std::to_string(c.seed),
                                  std::to_string(c.summary_window()),
                                  format_number(t.mu_window),
                                  format_number(t.active_utility_window),
                                  format_number(t.active_utility_se),
                                  format_number(t.delivery_rate),
                                  std::to_string(t.totals.requests),
                                  std::to_string(t.totals.served),
                                  std::to_string(t.totals.errored),
                                  std::to_string(t.totals.unserved),
                                  std::to_string(t.totals.refused),
                                  format_number(t.truncation_bound),
                                  joined(t.eta_window)};
  if (c.flavor == Flavor::Tft) {
    row.push_back(format_number(t.eta_window[0]));
    row.push_back(format_number(t.eta_window[1]));
  }
  if (analytic) {
    row.push_back(format_number((t.eta_window - analytic->eta).cwiseAbs().maxCoeff()));
    row.push_back(format_number(analytic->mu));
  }
  return row;
}

}  // namespace normforge
