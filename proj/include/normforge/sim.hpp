#pragma once

// Seeded agent-based simulation of the sharing network. Each period every
// requesting peer emits round(lambda*b) requests, the tracker routes them to
// servers that should accept them, service errors strike accepted transfers
// with probability eps, and all reputations update together at period end.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "normforge/model.hpp"

namespace normforge {

enum class Flavor : std::uint8_t { SocialNorm, Tft };

const char* to_string(Flavor f);

enum class DeviantAction : std::uint8_t {
  Comply,     // follow the norm (used to pin a reputation without deviating)
  RefuseAll,  // decline every request routed here
  ServeAll,   // accept every request, prescribed or not
};

/// Overrides the behaviour of one peer, or of every reciprocative peer when
/// `peer` is -1, during periods [from_period, from_period + periods).
/// periods = -1 keeps the override until the end of the run.
struct DeviantPolicy {
  int peer = 0;
  DeviantAction action = DeviantAction::RefuseAll;
  int from_period = 0;
  int periods = -1;
  std::optional<int> set_reputation;  // forced at the start of from_period

  bool active(int period) const {
    return period >= from_period && (periods < 0 || period < from_period + periods);
  }
};

struct PopulationMix {
  double reciprocative = 1;
  double altruistic = 0;
  double malicious = 0;
};

struct SimConfig {
  int n_peers = 200;
  int n_periods = 1000;
  std::uint64_t seed = 1;
  ProtocolParams<> params;
  NetworkEnv<> env;  // p_C and p_D are ignored here; `mix` sets the population
  PopulationMix mix;
  std::optional<DeviantPolicy> deviant;
  Flavor flavor = Flavor::SocialNorm;
  int window = 0;         // final periods averaged in the summary; 0 means a quarter of the run
  int discount_from = 0;  // discounted accumulators start here

  /// Mix taken from env.p_C and env.p_D.
  static SimConfig from_env(const ProtocolParams<>& params, const NetworkEnv<>& env, int n_peers,
                            int n_periods, std::uint64_t seed);

  void validate() const;

  int levels() const { return flavor == Flavor::Tft ? 2 : params.L + 1; }
  int summary_window() const { return window > 0 ? window : std::max(1, n_periods / 4); }
};

/// Peer kind by index: altruists first, then malicious peers, then the rest.
std::vector<PeerKind> assign_kinds(const SimConfig& config);

struct TransactionCounts {
  long requests = 0;  // emitted
  long served = 0;    // delivered intact
  long errored = 0;   // accepted but lost to a service error or a malicious server
  long unserved = 0;  // no server accepted before the redirect cap
  long refused = 0;   // server contacts that ended in a refusal

  long transactions() const { return served + errored + refused; }

  TransactionCounts& operator+=(const TransactionCounts& o) {
    requests += o.requests;
    served += o.served;
    errored += o.errored;
    unserved += o.unserved;
    refused += o.refused;
    return *this;
  }
  bool operator==(const TransactionCounts&) const = default;
};

constexpr std::size_t kKinds = 4;

struct PeriodRecord {
  Eigen::VectorXd eta;  // reputation shares at the start of the period
  std::array<double, kKinds> kind_utility{};  // mean one-period utility by PeerKind
  double active_utility = 0;  // mean over reciprocative peers at or above h_o
  int active_count = 0;
  int max_seed_uploads = 0;  // busiest altruistic peer
  TransactionCounts counts;
};

struct SimTrace {
  SimConfig config;
  std::vector<PeriodRecord> periods;
  Eigen::VectorXd discounted;  // per peer, from config.discount_from
  std::vector<PeerKind> kinds;
  Eigen::VectorXi final_reputation;
  TransactionCounts totals;

  // averages over the final window
  Eigen::VectorXd eta_window;
  double mu_window = 0;  // share of the whole population at or above h_o
  std::array<double, kKinds> utility_window{};
  double active_utility_window = 0;
  double active_utility_se = 0;  // batch-means standard error
  double delivery_rate = 0;      // intact chunks per request of reciprocative peers
  double truncation_bound = 0;   // bound on the discounted utility beyond the horizon
};

/// Runs the engine for either flavor.
SimTrace run_sim(const SimConfig& config);

/// Binary tit-for-tat baseline: serve exactly the clients that complied last
/// period. Requires flavor = Tft.
SimTrace run_tft(const SimConfig& config);

struct DeviationOptions {
  int pairs = 30;
  int burn_in = -1;       // -1 picks 20 * (L + 1) periods
  double horizon_tol = 1e-9;  // run until delta^t falls below this
  bool parallel = true;       // spread the seed pairs over worker threads
};

struct DeviationGain {
  double mean = 0;
  double std_error = 0;
  int pairs = 0;
};

/// Discounted utility of a tagged peer that deviates for one period at
/// reputation theta, minus that of the same peer complying, on paired seeds.
/// Active peers deviate by refusing all requests, inactive ones by serving.
DeviationGain measure_deviation_gain(const SimConfig& config, int theta,
                                     const DeviationOptions& options = {});

struct CooperationReport {
  std::vector<DeviationGain> gains;  // by reputation level
  bool sustained = false;  // no level shows a significantly positive gain
  double delivery_rate = 0;
  double reciprocative_utility = 0;
};

/// Decides from measured deviation gains whether reciprocative peers keep
/// complying, then runs the population in the resulting regime: everyone
/// complies when sustained, otherwise reciprocative peers stop uploading.
CooperationReport assess_cooperation(const SimConfig& config, const DeviationOptions& options = {});

}  // namespace normforge
