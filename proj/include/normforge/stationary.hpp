#pragma once

// Stationary reputation distributions of a population that follows the
// prescribed norm: closed form for harsh punishment with a uniform threshold,
// fixed-point iteration of the one-period update map otherwise, and the
// mixtures with malicious or altruistic sub-populations.

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "normforge/model.hpp"

namespace normforge {

enum class Population : std::uint8_t { Reciprocative, WithMalicious, WithAltruistic };

template <typename Scalar = double>
struct ReputationDistribution {
  Vector<Scalar> eta;      // whole population, indexed 0..L
  Scalar mu = 0;           // mass at or above h_o
  Scalar alpha = 0;        // error-punish probability the dynamics used
  Vector<Scalar> omega_r;  // reciprocative sub-population (equals eta when pure)
  Population population = Population::Reciprocative;
  Scalar mix = 0;          // p_D or p_C of the mixture, 0 when pure

  int L() const { return static_cast<int>(eta.size()) - 1; }
};

/// Thrown when the fixed-point iteration exhausts its budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(std::vector<double> last, double residual, long iterations)
      : std::runtime_error("stationary fixed point did not converge (residual " +
                           std::to_string(residual) + " after " + std::to_string(iterations) +
                           " iterations)"),
        last_iterate(std::move(last)),
        residual(residual),
        iterations(iterations) {}

  std::vector<double> last_iterate;
  double residual;
  long iterations;
};

struct FixedPointOptions {
  double tolerance = 1e-12;
  long max_iterations = 1'000'000;
};

namespace detail {

template <typename Scalar>
Scalar active_mass(const Vector<Scalar>& eta, int h_o) {
  return eta.tail(eta.size() - h_o).sum();
}

template <typename Scalar>
ReputationDistribution<Scalar> make_pure(Vector<Scalar> eta, int h_o, Scalar alpha) {
  ReputationDistribution<Scalar> d;
  d.mu = active_mass(eta, h_o);
  d.alpha = alpha;
  d.omega_r = eta;
  d.eta = std::move(eta);
  return d;
}

template <typename Scalar>
void require_harsh_uniform(const ProtocolParams<Scalar>& params, const char* what) {
  if (params.beta != Scalar(0))
    throw InvalidParameter("params.beta", std::string(what) + " requires beta = 0");
  if (!params.uniform_thresholds())
    throw InvalidParameter("params.m_o", std::string(what) + " requires m_o = h_o");
}

}  // namespace detail

/// One period of the reciprocative dynamics. Active peers move up with
/// probability 1 - alpha, are forgiven in place with alpha * beta^(L-theta+1)
/// and fall to 0 otherwise; inactive peers move up deterministically.
template <typename Scalar>
Vector<Scalar> reciprocative_update(const ProtocolParams<Scalar>& params, Scalar alpha,
                                    const Vector<Scalar>& eta) {
  const int L = params.L;
  Vector<Scalar> next = Vector<Scalar>::Zero(L + 1);
  for (int level = 0; level <= L; ++level) {
    const Scalar mass = eta[level];
    const int up = std::min(L, level + 1);
    if (level < params.h_o) {
      next[up] += mass;
      continue;
    }
    const Scalar keep = forgiveness_prob(params, level);
    next[up] += (Scalar(1) - alpha) * mass;
    next[level] += alpha * keep * mass;
    next[0] += alpha * (Scalar(1) - keep) * mass;
  }
  return next;
}

/// One period for malicious peers: every active malicious peer is reported
/// for each upload, so it is punished with certainty.
template <typename Scalar>
Vector<Scalar> malicious_update(const ProtocolParams<Scalar>& params, const Vector<Scalar>& omega) {
  return reciprocative_update(params, Scalar(1), omega);
}

/// Closed-form stationary point for beta = 0 and m_o = h_o.
template <typename Scalar>
ReputationDistribution<Scalar> stationary_closed_form(const ProtocolParams<Scalar>& params,
                                                      const NetworkEnv<Scalar>& env) {
  using std::pow;
  detail::require_harsh_uniform(params, "closed-form stationary distribution");
  const int L = params.L;
  const int h = params.h_o;
  const Scalar alpha = error_punish_prob(env, params.b);
  const Scalar mu = Scalar(1) / (Scalar(1) + alpha * Scalar(h));

  Vector<Scalar> eta(L + 1);
  for (int level = 0; level <= std::min(h, L); ++level) eta[level] = alpha * mu;
  for (int level = h + 1; level <= L - 1; ++level)
    eta[level] = pow(Scalar(1) - alpha, Scalar(level - h)) * alpha * mu;
  eta[L] = Scalar(1) - (Scalar(1) + Scalar(h) * alpha) * mu + pow(Scalar(1) - alpha, Scalar(L - h)) * mu;

  auto d = detail::make_pure(std::move(eta), h, alpha);
  d.mu = mu;
  return d;
}

/// Fixed point of the reciprocative update map, iterated from `initial` (the
/// uniform distribution when absent).
template <typename Scalar>
ReputationDistribution<Scalar> stationary_fixed_point(
    const ProtocolParams<Scalar>& params, const NetworkEnv<Scalar>& env,
    const std::optional<std::type_identity_t<Vector<Scalar>>>& initial = std::nullopt,
    FixedPointOptions opts = {}) {
  const int L = params.L;
  const Scalar alpha = error_punish_prob(env, params.b);

  if (alpha == Scalar(0)) {
    Vector<Scalar> point = Vector<Scalar>::Zero(L + 1);
    point[L] = 1;
    return detail::make_pure(std::move(point), params.h_o, alpha);
  }

  Vector<Scalar> eta = initial ? *initial : Vector<Scalar>::Constant(L + 1, Scalar(1) / Scalar(L + 1));
  if (eta.size() != L + 1) throw InvalidParameter("initial", "needs L + 1 entries");

  Scalar change = 0;
  for (long it = 0; it < opts.max_iterations; ++it) {
    Vector<Scalar> next = reciprocative_update(params, alpha, eta);
    change = (next - eta).cwiseAbs().maxCoeff();
    eta = std::move(next);
    if (change <= Scalar(opts.tolerance)) {
      eta /= eta.sum();
      return detail::make_pure(std::move(eta), params.h_o, alpha);
    }
  }
  std::vector<double> last(eta.data(), eta.data() + eta.size());
  throw ConvergenceError(std::move(last), static_cast<double>(change), opts.max_iterations);
}

/// Stationary distribution of the reciprocative sub-population: closed form
/// when it applies, fixed point otherwise.
template <typename Scalar>
ReputationDistribution<Scalar> stationary_reciprocative(const ProtocolParams<Scalar>& params,
                                                        const NetworkEnv<Scalar>& env) {
  if (params.beta == Scalar(0) && params.uniform_thresholds())
    return stationary_closed_form(params, env);
  return stationary_fixed_point(params, env);
}

/// Stationary cycle of malicious peers: uniform over 0..h_o.
template <typename Scalar>
Vector<Scalar> malicious_cycle(const ProtocolParams<Scalar>& params) {
  Vector<Scalar> omega = Vector<Scalar>::Zero(params.L + 1);
  omega.head(params.h_o + 1).setConstant(Scalar(1) / Scalar(params.h_o + 1));
  return omega;
}

template <typename Scalar>
ReputationDistribution<Scalar> stationary_malicious(const ProtocolParams<Scalar>& params,
                                                    const NetworkEnv<Scalar>& env) {
  if (!(env.p_D > 0 && env.p_D <= 1)) throw InvalidParameter("env.p_D", "must lie in (0,1]");
  if (env.p_C != Scalar(0)) throw InvalidParameter("env.p_C", "must be 0 with malicious peers");
  detail::require_harsh_uniform(params, "malicious mixture");

  const auto recip = stationary_closed_form(params, env);
  ReputationDistribution<Scalar> d;
  d.eta = (Scalar(1) - env.p_D) * recip.eta + env.p_D * malicious_cycle(params);
  d.mu = detail::active_mass(d.eta, params.h_o);
  d.alpha = recip.alpha;
  d.omega_r = recip.eta;
  d.population = Population::WithMalicious;
  d.mix = env.p_D;
  return d;
}

template <typename Scalar>
ReputationDistribution<Scalar> stationary_altruistic(const ProtocolParams<Scalar>& params,
                                                     const NetworkEnv<Scalar>& env) {
  if (!(env.p_C > 0 && env.p_C <= 1)) throw InvalidParameter("env.p_C", "must lie in (0,1]");
  if (env.p_D != Scalar(0)) throw InvalidParameter("env.p_D", "must be 0 with altruistic peers");
  if (!params.uniform_thresholds())
    throw InvalidParameter("params.m_o", "altruistic mixture requires m_o = h_o");

  const auto recip = stationary_reciprocative(params, env);
  ReputationDistribution<Scalar> d;
  d.eta = (Scalar(1) - env.p_C) * recip.eta;
  d.eta[params.L] += env.p_C;
  d.mu = detail::active_mass(d.eta, params.h_o);
  d.alpha = recip.alpha;
  d.omega_r = recip.eta;
  d.population = Population::WithAltruistic;
  d.mix = env.p_C;
  return d;
}

/// Dispatch on the population composition carried by `env`.
template <typename Scalar>
ReputationDistribution<Scalar> stationary(const ProtocolParams<Scalar>& params,
                                          const NetworkEnv<Scalar>& env) {
  if (env.p_C > 0 && env.p_D > 0)
    throw InvalidParameter("env.p_D", "analytic mode handles altruistic or malicious peers, not both");
  if (env.p_D > 0) return stationary_malicious(params, env);
  if (env.p_C > 0) return stationary_altruistic(params, env);
  return stationary_reciprocative(params, env);
}

/// Applies one period of the population dynamics matching `dist`.
template <typename Scalar>
Vector<Scalar> population_update(const ProtocolParams<Scalar>& params,
                                 const ReputationDistribution<Scalar>& dist) {
  const Vector<Scalar> recip = reciprocative_update(params, dist.alpha, dist.omega_r);
  switch (dist.population) {
    case Population::Reciprocative:
      return recip;
    case Population::WithMalicious: {
      const Vector<Scalar> mal = malicious_update(params, malicious_cycle(params));
      return (Scalar(1) - dist.mix) * recip + dist.mix * mal;
    }
    case Population::WithAltruistic: {
      Vector<Scalar> out = (Scalar(1) - dist.mix) * recip;
      out[params.L] += dist.mix;
      return out;
    }
  }
  return recip;
}

}  // namespace normforge
