#pragma once

// Scenario files and result serialization. Scenarios are JSON; results are
// JSON objects or flat CSV rows whose columns depend only on the command and
// the design problem. Vector-valued fields go into a single CSV cell with the
// entries joined by ';'.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "normforge/designer.hpp"
#include "normforge/sim.hpp"
#include "normforge/stationary.hpp"

namespace normforge {

using Json = nlohmann::ordered_json;

/// One sweep dimension: values min, min + step, ... up to max inclusive.
struct SweepAxis {
  std::string name;
  double min = 0;
  double max = 0;
  double step = 1;

  std::vector<double> values() const;
  bool operator==(const SweepAxis&) const = default;
};

/// Parameter names a sweep axis may address.
const std::vector<std::string>& sweep_parameters();

struct SimSettings {
  int n_peers = 2000;
  int n_periods = 5000;
  std::uint64_t seed = 1;
  Flavor flavor = Flavor::SocialNorm;
  int window = 0;
  bool compare_analytic = false;
  int pairs = 20;  // seed pairs per deviation estimate (compare)

  bool operator==(const SimSettings&) const = default;
};

struct OutputSpec {
  std::string path;  // empty writes to stdout
  std::string format = "json";

  bool operator==(const OutputSpec&) const = default;
};

struct Scenario {
  NetworkEnv<> env;
  std::optional<ProtocolParams<>> params;
  std::optional<DesignSpec> design;  // design->env mirrors env
  std::vector<SweepAxis> sweep;
  std::optional<SimSettings> sim;
  OutputSpec output;

  bool operator==(const Scenario&) const = default;
};

/// Parses a scenario. Throws InvalidParameter naming the offending field,
/// with field "config" when the text is not JSON at all.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);
Json to_json(const Scenario& s);

/// Applies `value` to the parameter `name` of a copy of the scenario.
Scenario with_parameter(Scenario s, const std::string& name, double value);

/// Every grid point of the scenario's sweep, in row-major order over the axes.
std::vector<Scenario> sweep_points(const Scenario& s);

struct AnalysisReport {
  ProtocolParams<> params;
  NetworkEnv<> env;
  ReputationDistribution<> dist;
  UtilityProfile<> utilities;
  IncentiveReport<> incentives;
};

AnalysisReport analyze(const ProtocolParams<>& params, const NetworkEnv<>& env);

Json to_json(const NetworkEnv<>& env);
Json to_json(const ProtocolParams<>& params);
Json to_json(const DesignSpec& spec);
Json to_json(const AnalysisReport& report);
Json to_json(const DesignResult& result, Problem problem);
Json to_json(const SimTrace& trace);

/// A CSV table: a header and rows of already formatted cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const;
};

std::vector<std::string> analysis_columns();
std::vector<std::string> analysis_row(const AnalysisReport& report);

std::vector<std::string> solve_columns(Problem problem);
std::vector<std::string> solve_row(const DesignResult& result, const DesignSpec& spec);

std::vector<std::string> search_log_columns();
std::vector<std::vector<std::string>> search_log_rows(const DesignResult& result);

/// Summary of a simulation. Tit-for-tat traces add eta_0/eta_1 columns and a
/// comparison against the analytic distribution adds linf_eta and mu_analytic.
std::vector<std::string> sim_columns(Flavor flavor, bool compare_analytic);
std::vector<std::string> sim_row(const SimTrace& trace, const std::optional<ReputationDistribution<>>& analytic);

/// Shortest text that reads back to the same double.
std::string format_number(double v);

}  // namespace normforge
