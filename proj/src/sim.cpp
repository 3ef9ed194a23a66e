#include "normforge/sim.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "normforge/parallel.hpp"
#include "normforge/rng.hpp"

namespace normforge {

const char* to_string(Flavor f) { return f == Flavor::Tft ? "tft" : "social_norm"; }

SimConfig SimConfig::from_env(const ProtocolParams<>& params, const NetworkEnv<>& env, int n_peers,
                              int n_periods, std::uint64_t seed) {
  SimConfig c;
  c.params = params;
  c.env = env;
  c.n_peers = n_peers;
  c.n_periods = n_periods;
  c.seed = seed;
  c.mix = {1.0 - env.p_C - env.p_D, env.p_C, env.p_D};
  return c;
}

void SimConfig::validate() const {
  if (n_peers < 2) throw InvalidParameter("sim.n_peers", "must be >= 2");
  if (n_periods < 1) throw InvalidParameter("sim.n_periods", "must be >= 1");
  if (flavor == Flavor::SocialNorm) params.validate();
  if (params.b < 1) throw InvalidParameter("params.b", "must be >= 1");
  env.validate();
  if (transactions_per_period(env, params.b) < 1)
    throw InvalidParameter("env.lambda", "round(lambda*b) must be >= 1");
  if (mix.reciprocative < 0 || mix.altruistic < 0 || mix.malicious < 0)
    throw InvalidParameter("sim.mix", "fractions must be >= 0");
  if (std::abs(mix.reciprocative + mix.altruistic + mix.malicious - 1.0) > 1e-9)
    throw InvalidParameter("sim.mix", "fractions must sum to 1");
  if (window < 0 || window > n_periods) throw InvalidParameter("sim.window", "must lie in [0, n_periods]");
  if (discount_from < 0 || discount_from >= n_periods)
    throw InvalidParameter("sim.discount_from", "must lie in [0, n_periods)");
  if (deviant) {
    if (deviant->peer < -1 || deviant->peer >= n_peers)
      throw InvalidParameter("sim.deviant.peer", "must be -1 or a peer index");
    if (deviant->set_reputation && (*deviant->set_reputation < 0 || *deviant->set_reputation >= levels()))
      throw InvalidParameter("sim.deviant.set_reputation", "must be a reputation level");
    if (deviant->from_period < 0) throw InvalidParameter("sim.deviant.from_period", "must be >= 0");
  }
}

std::vector<PeerKind> assign_kinds(const SimConfig& config) {
  const int n = config.n_peers;
  const int altruists = static_cast<int>(std::lround(config.mix.altruistic * n));
  const int malicious = std::min(n - altruists, static_cast<int>(std::lround(config.mix.malicious * n)));
  const PeerKind requester = config.flavor == Flavor::Tft ? PeerKind::TftAgent : PeerKind::Reciprocative;
  std::vector<PeerKind> kinds(n, requester);
  std::fill_n(kinds.begin(), altruists, PeerKind::Altruistic);
  std::fill_n(kinds.begin() + altruists, malicious, PeerKind::Malicious);
  return kinds;
}

namespace {

bool requests_chunks(PeerKind k) { return k == PeerKind::Reciprocative || k == PeerKind::TftAgent; }

class Engine {
 public:
  explicit Engine(const SimConfig& config)
      : cfg_(config),
        n_(config.n_peers),
        L_(config.levels() - 1),
        tft_(config.flavor == Flavor::Tft),
        active_from_(tft_ ? 1 : config.params.h_o),
        K_(transactions_per_period(config.env, config.params.b)),
        kinds_(assign_kinds(config)),
        rep_(n_, 0),
        phi_(n_),
        uploads_(n_),
        utility_(n_) {
    for (int i = 0; i < n_; ++i)
      if (kinds_[i] == PeerKind::Altruistic) rep_[i] = L_;
  }

  SimTrace run() {
    SimTrace trace;
    trace.config = cfg_;
    trace.kinds = kinds_;
    trace.discounted = Eigen::VectorXd::Zero(n_);
    trace.periods.reserve(cfg_.n_periods);
    double weight = 1.0;
    for (int t = 0; t < cfg_.n_periods; ++t) {
      if (cfg_.deviant && cfg_.deviant->set_reputation && t == cfg_.deviant->from_period)
        for_deviants([&](int i) { rep_[i] = *cfg_.deviant->set_reputation; });
      PeriodRecord rec = period(t);
      if (t >= cfg_.discount_from) {
        for (int i = 0; i < n_; ++i) trace.discounted[i] += weight * utility_[i];
        weight *= cfg_.env.delta;
      }
      trace.totals += rec.counts;
      trace.periods.push_back(std::move(rec));
      update_reputations(t);
    }
    trace.final_reputation = Eigen::Map<const Eigen::VectorXi>(rep_.data(), n_);
    const double u_max = K_ * std::max(cfg_.env.r, cfg_.env.c);
    trace.truncation_bound = weight * u_max / (1.0 - cfg_.env.delta);
    summarize(trace);
    return trace;
  }

 private:
  template <typename F>
  void for_deviants(F&& f) const {
    if (cfg_.deviant->peer >= 0) {
      f(cfg_.deviant->peer);
      return;
    }
    for (int i = 0; i < n_; ++i)
      if (requests_chunks(kinds_[i])) f(i);
  }

  DeviantAction action_of(int peer, int t) const {
    if (!cfg_.deviant || !cfg_.deviant->active(t) || !requests_chunks(kinds_[peer]))
      return DeviantAction::Comply;
    if (cfg_.deviant->peer >= 0 && cfg_.deviant->peer != peer) return DeviantAction::Comply;
    return cfg_.deviant->action;
  }

  bool prescribed(int server, int client) const {
    if (tft_) return client == 1;
    return social_strategy(cfg_.params, Reputation(server), Reputation(client)) == Action::Serve;
  }

  // Servers the tracker offers to a client at `level`.
  std::vector<int> candidates(int level, const std::vector<DeviantAction>& actions) const {
    std::vector<int> out;
    for (int s = 0; s < n_; ++s) {
      const PeerKind k = kinds_[s];
      if (k == PeerKind::Altruistic || k == PeerKind::Malicious || actions[s] == DeviantAction::ServeAll ||
          prescribed(rep_[s], level))
        out.push_back(s);
    }
    return out;
  }

  PeriodRecord period(int t) {
    PeriodRecord rec;
    rec.eta = Eigen::VectorXd::Zero(L_ + 1);
    for (int r : rep_) rec.eta[r] += 1.0;
    rec.eta /= n_;

    std::fill(phi_.begin(), phi_.end(), 0);
    std::fill(uploads_.begin(), uploads_.end(), 0);
    std::fill(utility_.begin(), utility_.end(), 0.0);
    std::vector<DeviantAction> actions(n_);
    for (int i = 0; i < n_; ++i) actions[i] = action_of(i, t);
    errors_.clear();
    for (int i = 0; i < n_; ++i) errors_.emplace_back(cfg_.seed, i, t, Purpose::Error);
    Stream order(cfg_.seed, global_owner(0), t, Purpose::Order);
    Stream route(cfg_.seed, global_owner(1), t, Purpose::Route);

    // Client levels sharing a candidate list form one routing group; each group
    // deals its requests round-robin over a shuffled list, so every server
    // receives its even share. Higher levels go first.
    const std::vector<int> start_rep = rep_;
    int level = L_;
    while (level >= 0) {
      const std::vector<int> list = candidates(level, actions);
      int low = level;
      while (low > 0 && candidates(low - 1, actions) == list) --low;
      std::vector<int> requests;
      for (int i = 0; i < n_; ++i)
        if (requests_chunks(kinds_[i]) && start_rep[i] >= low && start_rep[i] <= level)
          requests.insert(requests.end(), K_, i);
      std::shuffle(requests.begin(), requests.end(), order);
      std::vector<int> deck = list;
      std::shuffle(deck.begin(), deck.end(), route);
      route_group(requests, deck, actions, start_rep, rec.counts);
      level = low - 1;
    }

    double active_sum = 0;
    std::array<double, kKinds> sum{};
    std::array<int, kKinds> count{};
    for (int i = 0; i < n_; ++i) {
      const auto k = static_cast<std::size_t>(kinds_[i]);
      sum[k] += utility_[i];
      ++count[k];
      if (kinds_[i] == PeerKind::Altruistic) rec.max_seed_uploads = std::max(rec.max_seed_uploads, uploads_[i]);
      if (requests_chunks(kinds_[i]) && start_rep[i] >= active_from_) {
        active_sum += utility_[i];
        ++rec.active_count;
      }
    }
    for (std::size_t k = 0; k < kKinds; ++k) rec.kind_utility[k] = count[k] ? sum[k] / count[k] : 0.0;
    rec.active_utility = rec.active_count ? active_sum / rec.active_count : 0.0;
    return rec;
  }

  void route_group(const std::vector<int>& requests, std::vector<int>& deck,
                   const std::vector<DeviantAction>& actions, const std::vector<int>& rep,
                   TransactionCounts& counts) {
    const std::size_t m = deck.size();
    std::size_t next = 0;
    for (int client : requests) {
      ++counts.requests;
      bool done = false;
      for (int attempt = 0; attempt < n_ && m > 0 && !done; ++attempt) {
        const std::size_t pos = next++ % m;
        if (deck[pos] == client) {
          if (m == 1) break;
          std::swap(deck[pos], deck[(pos + 1) % m]);
        }
        const int s = deck[pos];
        const PeerKind k = kinds_[s];
        // seeds and indiscriminate servers stop at round(lambda*b) uploads
        if ((k == PeerKind::Altruistic || actions[s] == DeviantAction::ServeAll) && uploads_[s] >= K_) continue;
        const bool owed = k == PeerKind::Altruistic || k == PeerKind::Malicious || prescribed(rep[s], rep[client]);
        if (actions[s] == DeviantAction::RefuseAll) {
          ++counts.refused;
          if (owed) phi_[s] = 1;
          continue;
        }
        done = true;
        if (k == PeerKind::Malicious) {
          ++counts.errored;
          continue;
        }
        ++uploads_[s];
        utility_[s] -= cfg_.env.c;
        if (!owed) phi_[s] = 1;
        if (errors_[s].bernoulli(cfg_.env.eps)) {
          ++counts.errored;
          phi_[s] = 1;
        } else {
          ++counts.served;
          utility_[client] += cfg_.env.r;
        }
      }
      if (!done) ++counts.unserved;
    }
  }

  void update_reputations(int t) {
    for (int i = 0; i < n_; ++i) {
      switch (kinds_[i]) {
        case PeerKind::Altruistic:
          break;
        case PeerKind::Malicious:
          // counted as refusing every transfer it owes while active
          rep_[i] = rep_[i] >= active_from_ || tft_ ? 0 : rep_[i] + 1;
          break;
        case PeerKind::TftAgent:
          rep_[i] = phi_[i] ? 0 : 1;
          break;
        case PeerKind::Reciprocative: {
          const double keep = phi_[i] ? forgiveness_prob(cfg_.params, rep_[i]) : 0.0;
          const bool forgiven = keep > 0 && Stream(cfg_.seed, i, t, Purpose::Forgive).bernoulli(keep);
          rep_[i] = reputation_update(cfg_.params, Reputation(rep_[i]), phi_[i], forgiven).value;
          break;
        }
      }
    }
  }

  void summarize(SimTrace& trace) const {
    const int w = cfg_.summary_window();
    const int first = cfg_.n_periods - w;
    trace.eta_window = Eigen::VectorXd::Zero(L_ + 1);
    std::vector<double> active;
    TransactionCounts window_counts;
    for (int t = first; t < cfg_.n_periods; ++t) {
      const PeriodRecord& rec = trace.periods[t];
      trace.eta_window += rec.eta;
      for (std::size_t k = 0; k < kKinds; ++k) trace.utility_window[k] += rec.kind_utility[k] / w;
      if (rec.active_count > 0) active.push_back(rec.active_utility);
      window_counts += rec.counts;
    }
    trace.eta_window /= w;
    trace.mu_window = trace.eta_window.tail(L_ + 1 - active_from_).sum();
    if (!active.empty()) {
      trace.active_utility_window = std::accumulate(active.begin(), active.end(), 0.0) / active.size();
      // batch means absorb the period-to-period correlation
      const std::size_t batches = active.size() >= 20 ? 10 : active.size();
      const std::size_t per = active.size() / batches;
      if (batches > 1) {
        double ss = 0;
        for (std::size_t b = 0; b < batches; ++b) {
          const double m =
              std::accumulate(active.begin() + b * per, active.begin() + (b + 1) * per, 0.0) / per;
          ss += (m - trace.active_utility_window) * (m - trace.active_utility_window);
        }
        trace.active_utility_se = std::sqrt(ss / (batches - 1) / batches);
      }
    }
    trace.delivery_rate = window_counts.requests ? double(window_counts.served) / window_counts.requests : 0.0;
  }

  const SimConfig& cfg_;
  const int n_;
  const int L_;
  const bool tft_;
  const int active_from_;
  const int K_;
  const std::vector<PeerKind> kinds_;
  std::vector<int> rep_;
  std::vector<int> phi_;
  std::vector<int> uploads_;
  std::vector<double> utility_;
  std::vector<Stream> errors_;
};

}  // namespace

SimTrace run_sim(const SimConfig& config) {
  config.validate();
  return Engine(config).run();
}

SimTrace run_tft(const SimConfig& config) {
  if (config.flavor != Flavor::Tft) throw InvalidParameter("sim.flavor", "run_tft needs the tft flavor");
  return run_sim(config);
}

DeviationGain measure_deviation_gain(const SimConfig& config, int theta, const DeviationOptions& options) {
  config.validate();
  if (theta < 0 || theta >= config.levels()) throw InvalidParameter("theta", "must be a reputation level");
  if (options.pairs < 2) throw InvalidParameter("pairs", "must be >= 2");
  const auto kinds = assign_kinds(config);
  const auto tagged = std::find_if(kinds.begin(), kinds.end(), requests_chunks);
  if (tagged == kinds.end()) throw InvalidParameter("sim.mix", "needs at least one reciprocative peer");

  const double delta = config.env.delta;
  const int burn = options.burn_in >= 0 ? options.burn_in : 20 * config.levels();
  const int horizon =
      delta > 0 ? std::max(1, static_cast<int>(std::ceil(std::log(options.horizon_tol) / std::log(delta)))) : 1;

  SimConfig base = config;
  base.n_periods = burn + horizon;
  base.discount_from = burn;
  base.window = 1;
  const bool refuse = config.flavor == Flavor::Tft || theta >= config.params.h_o;
  const int peer = static_cast<int>(tagged - kinds.begin());

  std::vector<double> gains(options.pairs);
  auto pair = [&](std::size_t i) {
    SimConfig comply = base;
    comply.seed = mix64(config.seed ^ mix64(i + 1));
    comply.deviant = DeviantPolicy{peer, DeviantAction::Comply, burn, 1, theta};
    SimConfig deviate = comply;
    deviate.deviant->action = refuse ? DeviantAction::RefuseAll : DeviantAction::ServeAll;
    gains[i] = Engine(deviate).run().discounted[peer] - Engine(comply).run().discounted[peer];
  };
  if (options.parallel)
    parallel_for(gains.size(), pair);
  else
    for (std::size_t i = 0; i < gains.size(); ++i) pair(i);

  DeviationGain out;
  out.pairs = options.pairs;
  out.mean = std::accumulate(gains.begin(), gains.end(), 0.0) / gains.size();
  double ss = 0;
  for (double g : gains) ss += (g - out.mean) * (g - out.mean);
  out.std_error = std::sqrt(ss / (gains.size() - 1) / gains.size());
  return out;
}

CooperationReport assess_cooperation(const SimConfig& config, const DeviationOptions& options) {
  CooperationReport out;
  out.sustained = true;
  for (int theta = 0; theta < config.levels(); ++theta) {
    out.gains.push_back(measure_deviation_gain(config, theta, options));
    const auto& g = out.gains.back();
    if (g.mean > 0 && g.mean > 2 * g.std_error) out.sustained = false;
  }
  SimConfig population = config;
  population.deviant.reset();
  if (!out.sustained) population.deviant = DeviantPolicy{-1, DeviantAction::RefuseAll, 0, -1, std::nullopt};
  const SimTrace trace = run_sim(population);
  out.delivery_rate = trace.delivery_rate;
  const auto k = config.flavor == Flavor::Tft ? PeerKind::TftAgent : PeerKind::Reciprocative;
  out.reciprocative_utility = trace.utility_window[static_cast<std::size_t>(k)];
  return out;
}

}  // namespace normforge
