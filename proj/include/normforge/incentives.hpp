#pragma once

// Expected utilities under a norm and the one-shot-deviation incentive checks
// built on them, plus the closed-form and searched thresholds that bound the
// sustainable designs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "normforge/model.hpp"
#include "normforge/stationary.hpp"

namespace normforge {

template <typename Scalar = double>
struct UtilityProfile {
  Vector<Scalar> v_one;  // one-period utility by reputation
  Vector<Scalar> v_inf;  // discounted overall utility by reputation
  Scalar social_utility = 0;
};

template <typename Scalar = double>
struct IncentiveReport {
  Scalar serve_slack = 0;   // min over active levels of LHS - lambda*b*c
  Scalar refuse_slack = 0;  // min over inactive levels of LHS + c
  Scalar serve_margin = 0;  // serve_slack per unit of lambda*b
  Vector<Scalar> per_theta_slacks;
  bool is_equilibrium = false;
};

namespace detail {

template <typename Scalar>
void require_single_mixture(const NetworkEnv<Scalar>& env) {
  if (env.p_C > 0 && env.p_D > 0)
    throw InvalidParameter("env.p_D", "analytic mode handles altruistic or malicious peers, not both");
}

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Row-stochastic transition matrix of a compliant reciprocative peer.
template <typename Scalar>
Matrix<Scalar> compliant_transitions(const ProtocolParams<Scalar>& params, Scalar alpha) {
  const int L = params.L;
  Matrix<Scalar> P = Matrix<Scalar>::Zero(L + 1, L + 1);
  for (int level = 0; level <= L; ++level) {
    const int up = std::min(L, level + 1);
    if (level < params.h_o) {
      P(level, up) += 1;
      continue;
    }
    const Scalar keep = forgiveness_prob(params, level);
    P(level, up) += Scalar(1) - alpha;
    P(level, level) += alpha * keep;
    P(level, 0) += alpha * (Scalar(1) - keep);
  }
  return P;
}

}  // namespace detail

/// Expected uploads per period of an active server at each level when every
/// service-eligible client sends lambda*b requests, each routed uniformly over
/// the servers willing to take it. Zero below h_o.
template <typename Scalar>
Vector<Scalar> upload_loads(const ProtocolParams<Scalar>& params, const NetworkEnv<Scalar>& env,
                            const Vector<Scalar>& eta) {
  const int L = params.L;
  const int h = params.h_o;
  const Scalar rate = env.requests(params.b);

  // willing(c) is the mass of servers that accept a client at level c.
  Vector<Scalar> willing = Vector<Scalar>::Zero(L + 1);
  for (int client = 0; client <= L; ++client)
    for (int server = h; server <= L; ++server)
      if (params.service_threshold(server) <= client) willing[client] += eta[server];

  Vector<Scalar> load = Vector<Scalar>::Zero(L + 1);
  for (int server = h; server <= L; ++server)
    for (int client = params.service_threshold(server); client <= L; ++client)
      if (willing[client] > 0) load[server] += rate * eta[client] / willing[client];
  return load;
}

/// One-period utility by reputation for the regime selected by env and params.
template <typename Scalar>
Vector<Scalar> one_period_utilities(const ProtocolParams<Scalar>& params,
                                    const NetworkEnv<Scalar>& env,
                                    const ReputationDistribution<Scalar>& dist) {
  detail::require_single_mixture(env);
  const int L = params.L;
  const int h = params.h_o;
  const Scalar rate = env.requests(params.b);
  const Scalar net = (Scalar(1) - env.eps) * env.r - env.c;
  Vector<Scalar> v = Vector<Scalar>::Zero(L + 1);

  if (env.p_D > 0) {
    const Scalar hh = Scalar(h);
    const Scalar share = (dist.mu - env.p_D / (hh + 1)) / (dist.mu + hh / (hh + 1) * env.p_D);
    v.tail(L + 1 - h).setConstant(rate * share * net);
    return v;
  }

  if (env.p_C > 0) {
    const Scalar p = env.p_C;
    const Scalar gross = rate * (Scalar(1) - env.eps) * env.r;
    v.tail(L + 1 - h).setConstant(gross - rate * (dist.mu - p) / dist.mu * env.c);
    const Scalar inactive = p <= Scalar(0.5) ? gross * p / (Scalar(1) - p) : gross;
    v.head(h).setConstant(inactive);
    return v;
  }

  if (params.uniform_thresholds()) {
    v.tail(L + 1 - h).setConstant(rate * net);
    return v;
  }

  const Vector<Scalar> load = upload_loads(params, env, dist.eta);
  const int eligible = params.service_threshold(h);
  for (int level = 0; level <= L; ++level) {
    const Scalar benefit = level >= eligible ? rate * (Scalar(1) - env.eps) * env.r : Scalar(0);
    v[level] = benefit - env.c * load[level];
  }
  return v;
}

/// Discounted utilities solving v_inf = v_one + delta * P v_inf for the
/// compliant transition kernel P.
template <typename Scalar>
Vector<Scalar> discounted_utilities(const ProtocolParams<Scalar>& params,
                                    const NetworkEnv<Scalar>& env, Scalar alpha,
                                    const Vector<Scalar>& v_one) {
  const int n = params.L + 1;
  detail::Matrix<Scalar> A = detail::Matrix<Scalar>::Identity(n, n) -
                             env.delta * detail::compliant_transitions(params, alpha);
  return A.partialPivLu().solve(v_one);
}

/// Average one-period utility at the stationary distribution.
template <typename Scalar>
Scalar social_utility(const ProtocolParams<Scalar>& params, const NetworkEnv<Scalar>& env,
                      const ReputationDistribution<Scalar>& dist) {
  detail::require_single_mixture(env);
  const Scalar rate = env.requests(params.b);
  const Scalar net = (Scalar(1) - env.eps) * env.r - env.c;

  if (env.p_C > 0) {
    const Scalar p = env.p_C;
    if (p > Scalar(0.5)) return rate * (Scalar(1) - p) * net;
    const Scalar mu = dist.mu;
    // altruists upload at capacity and pay c for each upload like anyone else
    return rate * (Scalar(1) - env.eps) * (p / (Scalar(1) - p) * (Scalar(1) - mu) + (mu - p)) * env.r -
           rate * ((mu - p) * (mu - p) / mu + p) * env.c;
  }

  const Vector<Scalar> v = one_period_utilities(params, env, dist);
  if (env.p_D > 0) return (Scalar(1) - env.p_D) * dist.omega_r.dot(v);
  return dist.eta.dot(v);
}

template <typename Scalar>
UtilityProfile<Scalar> overall_utilities(const ProtocolParams<Scalar>& params,
                                         const NetworkEnv<Scalar>& env,
                                         const ReputationDistribution<Scalar>& dist) {
  UtilityProfile<Scalar> out;
  out.v_one = one_period_utilities(params, env, dist);
  out.v_inf = discounted_utilities(params, env, dist.alpha, out.v_one);
  out.social_utility = social_utility(params, env, dist);
  return out;
}

template <typename Scalar>
UtilityProfile<Scalar> overall_utilities(const ProtocolParams<Scalar>& params,
                                         const NetworkEnv<Scalar>& env) {
  return overall_utilities(params, env, stationary(params, env));
}

/// Evaluates the one-shot deviation constraints level by level. Active levels
/// must prefer serving over refusing every request of the period; inactive
/// levels, which are never punished while complying, must prefer refusing over
/// serving once.
template <typename Scalar>
IncentiveReport<Scalar> check_equilibrium(const ProtocolParams<Scalar>& params,
                                          const NetworkEnv<Scalar>& env,
                                          const UtilityProfile<Scalar>& profile) {
  const int L = params.L;
  const Scalar alpha = error_punish_prob(env, params.b);
  const Scalar rate = env.requests(params.b);
  const auto& w = profile.v_inf;

  // Slacks within round-off of zero are exact ties; the constraints are weak
  // inequalities, so ties count as satisfied.
  const Scalar scale = rate * (env.r + env.c) / (Scalar(1) - env.delta);
  const Scalar noise = Scalar(64) * std::numeric_limits<Scalar>::epsilon() * scale;
  auto settle = [&](Scalar s) { return std::abs(s) <= noise ? Scalar(0) : s; };

  IncentiveReport<Scalar> rep;
  rep.per_theta_slacks.resize(L + 1);
  rep.serve_slack = std::numeric_limits<Scalar>::infinity();
  rep.refuse_slack = std::numeric_limits<Scalar>::infinity();
  for (int level = 0; level <= L; ++level) {
    const Scalar keep = forgiveness_prob(params, level);
    const Scalar loss =
        env.delta * (w[std::min(level + 1, L)] - keep * w[level] - (Scalar(1) - keep) * w[0]);
    if (level >= params.h_o) {
      // a compliant active peer is itself punished with probability alpha
      rep.per_theta_slacks[level] = settle((Scalar(1) - alpha) * loss - rate * env.c);
      rep.serve_slack = std::min(rep.serve_slack, rep.per_theta_slacks[level]);
    } else {
      rep.per_theta_slacks[level] = settle(loss + env.c);
      rep.refuse_slack = std::min(rep.refuse_slack, rep.per_theta_slacks[level]);
    }
  }
  rep.serve_margin = rep.serve_slack / rate;
  rep.is_equilibrium = rep.serve_slack >= 0 && rep.refuse_slack >= 0;
  return rep;
}

template <typename Scalar>
IncentiveReport<Scalar> check_equilibrium(const ProtocolParams<Scalar>& params,
                                          const NetworkEnv<Scalar>& env) {
  return check_equilibrium(params, env, overall_utilities(params, env));
}

template <typename Scalar>
bool is_sustainable(const ProtocolParams<Scalar>& params, const NetworkEnv<Scalar>& env) {
  return check_equilibrium(params, env).is_equilibrium;
}

/// Active-peer constraint in closed form for harsh punishment and a uniform
/// threshold, per unit of lambda*b: what a compliant active peer stands to
/// lose by one refusal, minus c.
template <typename Scalar>
Scalar harsh_service_margin(const NetworkEnv<Scalar>& env, int b, int h_o) {
  using std::pow;
  const Scalar alpha = error_punish_prob(env, b);
  const Scalar d = env.delta;
  const Scalar net = (Scalar(1) - env.eps) * env.r - env.c;
  const Scalar denom = Scalar(1) - d * (Scalar(1) - alpha) - alpha * pow(d, Scalar(h_o + 1));
  return d * (Scalar(1) - alpha) * (Scalar(1) - pow(d, Scalar(h_o))) * net / denom - env.c;
}

/// Smallest service threshold in [1, L] sustaining the harsh-punishment norm
/// with b connections, from the logarithmic bound on delta^h_o.
template <typename Scalar>
std::optional<int> min_service_threshold(const NetworkEnv<Scalar>& env, int b, int L) {
  using std::ceil;
  using std::log;
  if (env.p_C != Scalar(0) || env.p_D != Scalar(0))
    throw InvalidParameter("env", "service threshold bound assumes a reciprocative population");
  if (b < 1) throw InvalidParameter("b", "must be >= 1");
  if (env.c == Scalar(0)) return 1;
  if (env.delta == Scalar(0)) return std::nullopt;

  const Scalar alpha = error_punish_prob(env, b);
  const Scalar net = (Scalar(1) - env.eps) * env.r - env.c;
  const Scalar denom = env.delta * ((Scalar(1) - alpha) * net - alpha * env.c);
  if (denom <= 0) return std::nullopt;
  const Scalar arg = Scalar(1) - (Scalar(1) - env.delta) * env.c / denom;
  if (arg <= 0) return std::nullopt;

  const Scalar bound = log(arg) / log(env.delta);
  // Round-off near an integral bound: accept the lower integer when the
  // constraint itself holds there.
  int h = static_cast<int>(ceil(bound - Scalar(1e-9)));
  h = std::max(h, 1);
  if (harsh_service_margin(env, b, h) < 0) ++h;
  if (h > L) return std::nullopt;
  return h;
}

/// Largest b in [1, b_cap] for which the norm is sustainable; the constraint
/// only weakens as b grows, so a binary search suffices.
template <typename Scalar>
std::optional<int> max_connections(const ProtocolParams<Scalar>& params,
                                   const NetworkEnv<Scalar>& env, int b_cap) {
  if (b_cap < 1) throw InvalidParameter("b_cap", "must be >= 1");
  auto ok = [&](int b) { return is_sustainable(params.with_b(b), env); };
  if (!ok(1)) return std::nullopt;
  int lo = 1;
  int hi = b_cap;
  while (lo < hi) {
    const int mid = lo + (hi - lo + 1) / 2;
    if (ok(mid))
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

/// Largest c/r admitting any sustainable harsh-punishment norm with L levels;
/// attained at h_o = L, b = 1.
template <typename Scalar>
Scalar existence_cost_threshold(const NetworkEnv<Scalar>& env, int L) {
  using std::pow;
  if (L < 1) throw InvalidParameter("L", "must be >= 1");
  const Scalar d = env.delta;
  const Scalar keep = Scalar(1) - error_punish_prob(env, 1);
  const Scalar tail = Scalar(1) - pow(d, Scalar(L));
  return d * (Scalar(1) - env.eps) * keep * tail / (Scalar(1) - d + d * tail);
}

enum class ThresholdStatus : std::uint8_t { Root, AlwaysSatisfied, NeverSatisfied };

template <typename Scalar = double>
struct ThresholdSearch {
  Scalar value = 0;
  ThresholdStatus status = ThresholdStatus::Root;
};

/// Smallest discount factor admitting a sustainable norm with L levels,
/// bisected on the (h_o = L, b = 1) constraint, which grows with delta.
template <typename Scalar>
ThresholdSearch<Scalar> existence_discount_threshold(const NetworkEnv<Scalar>& env, int L,
                                                     Scalar tolerance = Scalar(1e-10)) {
  if (L < 1) throw InvalidParameter("L", "must be >= 1");
  if (!(env.c < env.r * (Scalar(1) - env.eps)))
    throw InvalidParameter("env.c", "requires c/r < 1 - eps");
  if (env.c == Scalar(0)) return {Scalar(0), ThresholdStatus::AlwaysSatisfied};

  auto margin = [&](Scalar d) {
    NetworkEnv<Scalar> e = env;
    e.delta = d;
    return harsh_service_margin(e, 1, L);
  };
  Scalar lo = 0;
  Scalar hi = Scalar(1) - Scalar(1e-12);
  if (margin(hi) < 0) return {Scalar(1), ThresholdStatus::NeverSatisfied};
  while (hi - lo > tolerance) {
    const Scalar mid = (lo + hi) / 2;
    if (margin(mid) >= 0)
      hi = mid;
    else
      lo = mid;
  }
  return {hi, ThresholdStatus::Root};
}

/// Largest beta keeping the norm sustainable, by bisection. Empty when even
/// harsh punishment fails.
template <typename Scalar>
std::optional<Scalar> max_forgiveness(const ProtocolParams<Scalar>& params,
                                      const NetworkEnv<Scalar>& env,
                                      Scalar tolerance = Scalar(1e-8)) {
  auto ok = [&](Scalar beta) { return is_sustainable(params.with_beta(beta), env); };
  if (!ok(Scalar(0))) return std::nullopt;
  if (ok(Scalar(1))) return Scalar(1);
  Scalar lo = 0;
  Scalar hi = 1;
  while (hi - lo > tolerance) {
    const Scalar mid = (lo + hi) / 2;
    if (ok(mid))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

/// Largest altruistic fraction in [0, 0.5] under which the norm stays
/// sustainable: a downward grid scan followed by bisection of the last step.
template <typename Scalar>
Scalar max_altruist_fraction(const ProtocolParams<Scalar>& params, const NetworkEnv<Scalar>& env,
                             Scalar tolerance = Scalar(1e-8)) {
  if (env.p_D != Scalar(0)) throw InvalidParameter("env.p_D", "must be 0");
  auto ok = [&](Scalar p) {
    NetworkEnv<Scalar> e = env;
    e.p_C = p;
    return is_sustainable(params, e);
  };
  if (!ok(Scalar(0))) return Scalar(0);

  constexpr int kSteps = 100;
  const Scalar step = Scalar(0.5) / Scalar(kSteps);
  for (int i = kSteps; i >= 0; --i) {
    const Scalar p = step * Scalar(i);
    if (!ok(p)) continue;
    if (i == kSteps) return p;
    Scalar lo = p;
    Scalar hi = p + step;
    while (hi - lo > tolerance) {
      const Scalar mid = (lo + hi) / 2;
      if (ok(mid))
        lo = mid;
      else
        hi = mid;
    }
    return lo;
  }
  return Scalar(0);
}

template <typename Scalar = double>
struct AltruistOutcome {
  Scalar social_utility = 0;
  Scalar reciprocative_utility = 0;  // mean one-period utility of a reciprocative peer
  bool sustained = false;
};

/// Outcome of a norm with an altruistic fraction env.p_C. When the norm is not
/// sustainable reciprocative peers stop serving each other and only the
/// altruists' capacity of lambda*b uploads per period remains.
template <typename Scalar>
AltruistOutcome<Scalar> altruist_outcome(const ProtocolParams<Scalar>& params,
                                         const NetworkEnv<Scalar>& env) {
  if (env.p_D != Scalar(0)) throw InvalidParameter("env.p_D", "must be 0");
  const Scalar p = env.p_C;
  const Scalar rate = env.requests(params.b);
  const Scalar gross = rate * (Scalar(1) - env.eps) * env.r;
  const Scalar net = (Scalar(1) - env.eps) * env.r - env.c;

  AltruistOutcome<Scalar> out;
  if (p <= Scalar(0.5)) {
    const auto dist = stationary(params, env);
    const auto profile = overall_utilities(params, env, dist);
    if (check_equilibrium(params, env, profile).is_equilibrium) {
      out.sustained = true;
      out.social_utility = profile.social_utility;
      out.reciprocative_utility = dist.omega_r.dot(profile.v_one);
      return out;
    }
  }
  out.social_utility = rate * std::min(p, Scalar(1) - p) * net;
  out.reciprocative_utility = p < Scalar(1) ? gross * std::min(Scalar(1), p / (Scalar(1) - p)) : gross;
  return out;
}

}  // namespace normforge
