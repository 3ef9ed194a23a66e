#include "normforge/designer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace normforge {

const char* to_string(Problem p) {
  switch (p) {
    case Problem::Osne: return "osne";
    case Problem::OsneVp: return "osne_vp";
    case Problem::OsneVps: return "osne_vps";
    case Problem::OsneAh: return "osne_ah";
  }
  return "?";
}

std::optional<Problem> problem_from_string(const std::string& name) {
  for (Problem p : {Problem::Osne, Problem::OsneVp, Problem::OsneVps, Problem::OsneAh})
    if (name == to_string(p)) return p;
  return std::nullopt;
}

void DesignSpec::validate() const {
  env.validate();
  if (L < 1) throw InvalidParameter("design.L", "must be >= 1");
  if (b_cap < 1) throw InvalidParameter("design.b_cap", "must be >= 1");
  if (!(beta_grid > 0 && beta_grid <= 1)) throw InvalidParameter("design.beta_grid", "must lie in (0,1]");
  if (!(pc_grid > 0 && pc_grid <= 1)) throw InvalidParameter("design.pc_grid", "must lie in (0,1]");
  if (!(pc_max >= 0 && pc_max <= 1)) throw InvalidParameter("design.pc_max", "must lie in [0,1]");
  if (problem == Problem::OsneAh && env.p_D != 0) throw InvalidParameter("env.p_D", "must be 0 for osne_ah");
}

bool preferred(const SearchEntry& a, const SearchEntry& b) {
  const double tol = 1e-12 * std::max({1.0, std::abs(a.utility), std::abs(b.utility)});
  if (a.utility > b.utility + tol) return true;
  if (b.utility > a.utility + tol) return false;
  const auto& p = a.candidate;
  const auto& q = b.candidate;
  if (p.h_o != q.h_o) return p.h_o < q.h_o;
  if (p.b != q.b) return p.b > q.b;
  if (p.beta != q.beta) return p.beta > q.beta;
  if (p.m_o != q.m_o)
    return std::lexicographical_compare(p.m_o.data(), p.m_o.data() + p.m_o.size(), q.m_o.data(),
                                        q.m_o.data() + q.m_o.size());
  return a.p_C < b.p_C;
}

std::vector<Eigen::VectorXi> threshold_candidates(int L, int h_o, bool full) {
  const int n = L - h_o + 1;
  std::vector<Eigen::VectorXi> out;
  if (!full) {
    // h_o on the first `split` levels, h_o + 1 on the rest
    for (int split = n; split >= 1; --split) {
      Eigen::VectorXi m = Eigen::VectorXi::Constant(n, std::min(h_o + 1, L));
      m.head(split).setConstant(h_o);
      if (out.empty() || out.back() != m) out.push_back(m);
    }
    if (h_o + 1 <= L) out.push_back(Eigen::VectorXi::Constant(n, h_o + 1));
    return out;
  }
  Eigen::VectorXi m = Eigen::VectorXi::Constant(n, h_o);
  for (;;) {
    out.push_back(m);
    int i = n - 1;
    while (i >= 0 && m[i] == L) --i;
    if (i < 0) break;
    const int v = m[i] + 1;
    for (int j = i; j < n; ++j) m[j] = v;
  }
  return out;
}

SearchEntry evaluate(const ProtocolParams<>& params, const NetworkEnv<>& env) {
  SearchEntry entry;
  entry.candidate = params;
  entry.p_C = env.p_C;
  const auto dist = stationary(params, env);
  const auto profile = overall_utilities(params, env, dist);
  const auto report = check_equilibrium(params, env, profile);
  entry.slack = std::min(report.serve_slack, report.refuse_slack);
  entry.utility = profile.social_utility;
  // above one half the altruists serve everyone and no reciprocity is needed
  entry.feasible = env.p_C > 0.5 || report.is_equilibrium;
  return entry;
}

namespace {

// Runs `tasks` independent searches in parallel and keeps their logs in task
// order so the reduction below is deterministic.
DesignResult reduce(std::size_t tasks, const std::function<std::vector<SearchEntry>(std::size_t)>& task) {
  std::vector<std::vector<SearchEntry>> logs(tasks);
  parallel_for(tasks, [&](std::size_t i) { logs[i] = task(i); });

  DesignResult result;
  const SearchEntry* best = nullptr;
  for (auto& log : logs)
    for (auto& e : log) result.search_log.push_back(std::move(e));
  for (const auto& e : result.search_log)
    if (e.feasible && (!best || preferred(e, *best))) best = &e;
  if (best) {
    result.feasible = true;
    result.params = best->candidate;
    result.pC_star = best->p_C;
    result.utility = best->utility;
    result.reciprocity_sustained = best->p_C <= 0.5;
  } else if (!result.search_log.empty()) {
    result.params = result.search_log.back().candidate;
  }
  return result;
}

std::vector<double> beta_points(double step) {
  std::vector<double> grid;
  const long n = std::lround(std::floor(1.0 / step + 1e-9));
  for (long k = 0; k <= n; ++k) grid.push_back(std::min(1.0, static_cast<double>(k) * step));
  if (grid.back() < 1.0) grid.push_back(1.0);
  return grid;
}

// Probes beta for fixed (h_o, m_o, b). With uniform thresholds the constraint
// tightens monotonically in beta, so a binary search for the largest
// sustainable grid point suffices; per-level thresholds can make it
// non-monotone and get a full grid scan. Every probe is logged and the reducer
// picks among them.
std::vector<SearchEntry> best_beta(const ProtocolParams<>& base, const NetworkEnv<>& env,
                                   const std::vector<double>& grid, bool refine) {
  std::vector<SearchEntry> log;
  auto probe = [&](double beta) {
    log.push_back(evaluate(base.with_beta(beta), env));
    return log.back().feasible;
  };
  auto bisect = [&](double ok, double bad) {
    while (bad - ok > 1e-8) {
      const double mid = 0.5 * (ok + bad);
      (probe(mid) ? ok : bad) = mid;
    }
  };

  if (!base.uniform_thresholds()) {
    std::vector<char> ok(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) ok[k] = probe(grid[k]);
    if (refine)
      for (std::size_t k = 0; k + 1 < grid.size(); ++k)
        if (ok[k] && !ok[k + 1]) bisect(grid[k], grid[k + 1]);
    return log;
  }

  if (!probe(grid.front()) || probe(grid.back())) return log;
  std::size_t lo = 0;
  std::size_t hi = grid.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    (probe(grid[mid]) ? lo : hi) = mid;
  }
  if (refine) bisect(grid[lo], grid[hi]);
  return log;
}

}  // namespace

DesignResult solve_osne(const DesignSpec& spec) {
  spec.validate();
  if (spec.literal_table) return solve_osne_literal(spec);
  // For each h_o the utility grows with b while the constraint only tightens,
  // so the largest sustainable b is the candidate for that h_o.
  return reduce(spec.L, [&](std::size_t i) {
    const int h = static_cast<int>(i) + 1;
    const auto base = ProtocolParams<>::uniform(spec.L, h, 1);
    std::vector<SearchEntry> log;
    auto probe = [&](int b) {
      log.push_back(evaluate(base.with_b(b), spec.env));
      return log.back();
    };
    if (!probe(1).feasible) return log;
    int lo = 1;
    int hi = spec.b_cap;
    while (lo < hi) {
      const int mid = lo + (hi - lo + 1) / 2;
      if (probe(mid).feasible)
        lo = mid;
      else
        hi = mid - 1;
    }
    return log;
  });
}

DesignResult solve_osne_literal(const DesignSpec& spec) {
  spec.validate();
  DesignResult result;
  const auto& env = spec.env;
  auto eval = [&](int h, int b) {
    result.search_log.push_back(evaluate(ProtocolParams<>::uniform(spec.L, h, b), env));
    return result.search_log.back();
  };

  // entry guard on the existence thresholds
  // T_c < 1 - eps, so the delta threshold below is always defined
  if (env.c / env.r > existence_cost_threshold(env, spec.L)) return result;
  const auto td = existence_discount_threshold(env, spec.L);
  const bool delta_ok = td.status == ThresholdStatus::AlwaysSatisfied ||
                        (td.status == ThresholdStatus::Root && env.delta > td.value);
  if (!delta_ok) return result;

  // b is not reset between h_o values
  int h = 1;
  int b = spec.b_cap;
  bool flag = false;
  while (h <= spec.L && !flag) {
    while (b >= 1 && !flag) {
      flag = eval(h, b).feasible;
      --b;
    }
    ++h;
  }
  const int h_mark = h - 1;
  const int b_mark = b + 1;

  std::vector<SearchEntry> finalists;
  if (const auto e = eval(h_mark, b_mark); e.feasible) finalists.push_back(e);
  for (int bb = spec.b_cap; bb >= 1; --bb)
    if (const auto e = eval(h_mark, bb); e.feasible) {
      finalists.push_back(e);
      break;
    }
  for (int hh = 1; hh <= spec.L; ++hh)
    if (const auto e = eval(hh, b_mark); e.feasible) {
      finalists.push_back(e);
      break;
    }
  for (const auto& e : finalists)
    if (!result.feasible || preferred(e, {result.params, 0, 0, result.utility, true})) {
      result.feasible = true;
      result.params = e.candidate;
      result.utility = e.utility;
    }
  result.reciprocity_sustained = result.feasible;
  return result;
}

DesignResult solve_osne_vp(const DesignSpec& spec) {
  spec.validate();
  const auto grid = beta_points(spec.beta_grid);
  const std::size_t tasks = static_cast<std::size_t>(spec.L) * spec.b_cap;
  return reduce(tasks, [&](std::size_t i) {
    const int h = static_cast<int>(i) / spec.b_cap + 1;
    const int b = static_cast<int>(i) % spec.b_cap + 1;
    return best_beta(ProtocolParams<>::uniform(spec.L, h, b), spec.env, grid, spec.refine_beta);
  });
}

DesignResult solve_osne_vps(const DesignSpec& spec) {
  spec.validate();
  const bool full = spec.full_thresholds.value_or(spec.L <= 6);
  const auto grid = beta_points(spec.beta_grid);
  std::vector<ProtocolParams<>> bases;
  for (int h = 1; h <= spec.L; ++h)
    for (const auto& m : threshold_candidates(spec.L, h, full))
      for (int b = 1; b <= spec.b_cap; ++b) bases.push_back(ProtocolParams<>::with_thresholds(spec.L, h, m, b));
  return reduce(bases.size(), [&](std::size_t i) {
    return best_beta(bases[i], spec.env, grid, spec.refine_beta);
  });
}

DesignResult solve_osne_ah(const DesignSpec& spec) {
  spec.validate();
  std::vector<double> pcs;
  const long n = std::lround(std::floor(spec.pc_max / spec.pc_grid + 1e-9));
  for (long k = 0; k <= n; ++k) pcs.push_back(std::min(1.0, static_cast<double>(k) * spec.pc_grid));
  const std::size_t per_pc = static_cast<std::size_t>(spec.L) * spec.b_cap;
  return reduce(pcs.size() * per_pc, [&](std::size_t i) {
    NetworkEnv<> env = spec.env;
    env.p_C = pcs[i / per_pc];
    const int h = static_cast<int>(i % per_pc) / spec.b_cap + 1;
    const int b = static_cast<int>(i % per_pc) % spec.b_cap + 1;
    return std::vector<SearchEntry>{evaluate(ProtocolParams<>::uniform(spec.L, h, b), env)};
  });
}

DesignResult solve(const DesignSpec& spec) {
  switch (spec.problem) {
    case Problem::Osne: return solve_osne(spec);
    case Problem::OsneVp: return solve_osne_vp(spec);
    case Problem::OsneVps: return solve_osne_vps(spec);
    case Problem::OsneAh: return solve_osne_ah(spec);
  }
  throw InvalidParameter("design.problem", "unknown problem");
}

}  // namespace normforge
