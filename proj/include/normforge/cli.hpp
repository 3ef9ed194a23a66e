#pragma once

// Command-line front end: analyze | check | solve | sweep | simulate | compare.
// Exit codes: 0 success, 2 configuration error, 3 infeasible design or
// unsustainable norm, 4 non-convergence (analytic or simulated).

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "normforge/io.hpp"

namespace normforge {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfigError = 2, kInfeasible = 3, kNoConvergence = 4 };

/// Protocol comparison over a c/r sweep: tit-for-tat against social norms,
/// each judged by simulated deviation gains.
struct CompareSpec {
  NetworkEnv<> env;  // c is replaced by c_r * r at every point
  int L = 3;
  int b = 5;
  std::vector<double> c_r;
  int n_peers = 200;
  int n_periods = 200;
  std::uint64_t seed = 1;
  int pairs = 20;
  double beta_grid = 0.05;
};

struct CompareRow {
  double c_r = 0;
  std::string protocol;  // tft, norm_h<k>, norm_designed, norm_best
  ProtocolParams<> params;
  bool sustained = false;
  double delivery_rate = 0;
  double utility = 0;
  double max_gain = 0;
  double max_gain_se = 0;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  std::optional<double> tft_collapse;   // smallest c/r where tft is not sustained
  std::optional<double> norm_collapse;  // smallest c/r where no social norm is sustained
};

/// Social norms tried at each point: the designer's optimum under forgiveness
/// (when one exists) and every harsh uniform norm (h_o, b). The best norm is
/// the sustained one with the highest simulated reciprocative utility.
CompareResult compare_protocols(const CompareSpec& spec);

std::vector<std::string> compare_columns();
std::vector<std::string> compare_row(const CompareRow& row);

/// Entry point used by the executable. Writes results to `out` and error
/// objects to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace normforge
