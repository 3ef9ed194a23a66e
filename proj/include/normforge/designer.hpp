#pragma once

// Searches over sustainable protocols for the one with the highest social
// utility: (h_o, b) alone, with forgiveness, with per-level client
// thresholds, and jointly with the share of altruistic peers.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "normforge/incentives.hpp"
#include "normforge/parallel.hpp"

namespace normforge {

enum class Problem : std::uint8_t { Osne, OsneVp, OsneVps, OsneAh };

const char* to_string(Problem p);
std::optional<Problem> problem_from_string(const std::string& name);

struct DesignSpec {
  Problem problem = Problem::Osne;
  int L = 3;
  int b_cap = 10;
  double beta_grid = 0.01;
  double pc_grid = 0.01;
  double pc_max = 1.0;       // upper end of the altruist grid
  bool refine_beta = true;   // bisect between the best grid point and the next
  bool literal_table = false;  // OSNE only: nested-sweep heuristic instead of the exact search
  std::optional<bool> full_thresholds;  // VPS: enumerate every m_o (default L <= 6)
  NetworkEnv<> env;

  void validate() const;
  bool operator==(const DesignSpec&) const = default;
};

struct SearchEntry {
  ProtocolParams<> candidate;
  double p_C = 0;
  double slack = 0;  // smallest constraint slack; negative when unsustainable
  double utility = 0;
  bool feasible = false;
};

struct DesignResult {
  ProtocolParams<> params;
  double pC_star = 0;
  double utility = 0;
  bool feasible = false;
  bool reciprocity_sustained = false;  // AH: false when altruists carry the network
  std::vector<SearchEntry> search_log;
};

/// Strict preference used by every solver: higher utility, then smaller h_o,
/// larger b, larger beta, lexicographically smaller m_o, smaller p_C.
bool preferred(const SearchEntry& a, const SearchEntry& b);

/// Every admissible threshold vector for (L, h_o). With `full` false only the
/// step patterns taking values h_o and h_o + 1 are returned.
std::vector<Eigen::VectorXi> threshold_candidates(int L, int h_o, bool full);

/// Scores one candidate. Above p_C = 0.5 a candidate counts as feasible
/// without the incentive constraints, since altruists serve every request.
SearchEntry evaluate(const ProtocolParams<>& params, const NetworkEnv<>& env);

DesignResult solve_osne(const DesignSpec& spec);
DesignResult solve_osne_literal(const DesignSpec& spec);
DesignResult solve_osne_vp(const DesignSpec& spec);
DesignResult solve_osne_vps(const DesignSpec& spec);
DesignResult solve_osne_ah(const DesignSpec& spec);
DesignResult solve(const DesignSpec& spec);

}  // namespace normforge
