#pragma once

// Domain types for reputation-based sharing norms: the environment, the
// protocol parameters (service thresholds plus reputation scheme) and the
// pure decision rules shared by the analytic code and the simulator.

#include <cmath>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace normforge {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using VectorXi = Eigen::VectorXi;

/// Raised when a domain object is built from values outside its invariants.
/// `field` names the offending input so that front ends can report it.
class InvalidParameter : public std::invalid_argument {
 public:
  InvalidParameter(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class Action : std::uint8_t { Serve, NotServe };

enum class PeerKind : std::uint8_t { Reciprocative, Altruistic, Malicious, TftAgent };

inline const char* to_string(Action a) { return a == Action::Serve ? "S" : "NS"; }

inline const char* to_string(PeerKind k) {
  switch (k) {
    case PeerKind::Reciprocative: return "reciprocative";
    case PeerKind::Altruistic: return "altruistic";
    case PeerKind::Malicious: return "malicious";
    case PeerKind::TftAgent: return "tft";
  }
  return "?";
}

/// A peer's reputation level in {0..L}.
struct Reputation {
  int value = 0;

  constexpr Reputation() = default;
  constexpr explicit Reputation(int v) : value(v) {}

  constexpr auto operator<=>(const Reputation&) const = default;
};

/// Network and peer constants. All utilities are in abstract units.
template <typename Scalar = double>
struct NetworkEnv {
  Scalar r = 1;       // benefit per received chunk
  Scalar c = 0;       // cost per uploaded chunk
  Scalar eps = 0;     // service-error probability per transaction
  Scalar lambda = 1;  // utilization of each connection per period
  Scalar delta = 0;   // discount factor
  Scalar p_C = 0;     // altruistic fraction
  Scalar p_D = 0;     // malicious fraction

  /// Expected number of transactions per period on b connections.
  Scalar requests(int b) const { return lambda * static_cast<Scalar>(b); }

  void validate() const {
    if (!(r > 0)) throw InvalidParameter("env.r", "must be > 0");
    if (!(c >= 0)) throw InvalidParameter("env.c", "must be >= 0");
    if (!(r > c)) throw InvalidParameter("env.c", "must be < r");
    if (!(eps >= 0 && eps < 1)) throw InvalidParameter("env.eps", "must lie in [0,1)");
    if (!(lambda > 0)) throw InvalidParameter("env.lambda", "must be > 0");
    if (!(delta >= 0 && delta < 1)) throw InvalidParameter("env.delta", "must lie in [0,1)");
    if (!(p_C >= 0 && p_C <= 1)) throw InvalidParameter("env.p_C", "must lie in [0,1]");
    if (!(p_D >= 0 && p_D <= 1)) throw InvalidParameter("env.p_D", "must lie in [0,1]");
    if (p_C + p_D > 1) throw InvalidParameter("env.p_D", "p_C + p_D must be <= 1");
  }

  bool operator==(const NetworkEnv&) const = default;

  template <typename Other>
  NetworkEnv<Other> cast() const {
    return {Other(r), Other(c), Other(eps), Other(lambda), Other(delta), Other(p_C), Other(p_D)};
  }
};

/// A candidate social norm: threshold strategy (h_o, m_o) with the (L, beta)
/// reputation scheme and b concurrent connections.
///
/// m_o holds the client threshold of every active server level, indexed from
/// h_o to L. Values lie in [h_o, L] and never decrease with the server level.
template <typename Scalar = double>
struct ProtocolParams {
  int L = 1;
  int h_o = 1;
  VectorXi m_o = VectorXi::Constant(1, 1);
  Scalar beta = 0;
  int b = 1;

  static ProtocolParams uniform(int L, int h_o, int b, Scalar beta = 0) {
    ProtocolParams p;
    p.L = L;
    p.h_o = h_o;
    p.b = b;
    p.beta = beta;
    p.m_o = VectorXi::Constant(std::max(L - h_o + 1, 0), h_o);
    p.validate();
    return p;
  }

  static ProtocolParams with_thresholds(int L, int h_o, VectorXi m_o, int b, Scalar beta = 0) {
    ProtocolParams p;
    p.L = L;
    p.h_o = h_o;
    p.b = b;
    p.beta = beta;
    p.m_o = std::move(m_o);
    p.validate();
    return p;
  }

  void validate() const {
    if (L < 1) throw InvalidParameter("params.L", "must be >= 1");
    if (h_o < 1 || h_o > L) throw InvalidParameter("params.h_o", "must lie in [1, L]");
    if (b < 1) throw InvalidParameter("params.b", "must be >= 1");
    if (!(beta >= 0 && beta <= 1)) throw InvalidParameter("params.beta", "must lie in [0,1]");
    if (m_o.size() != L - h_o + 1)
      throw InvalidParameter("params.m_o", "needs one entry per level h_o..L");
    for (Eigen::Index i = 0; i < m_o.size(); ++i) {
      if (m_o[i] < h_o || m_o[i] > L)
        throw InvalidParameter("params.m_o", "entries must lie in [h_o, L]");
      if (i > 0 && m_o[i] < m_o[i - 1])
        throw InvalidParameter("params.m_o", "must be non-decreasing");
    }
  }

  /// Client threshold applied by an active server at `level` (level >= h_o).
  int service_threshold(int level) const { return m_o[level - h_o]; }

  bool uniform_thresholds() const { return (m_o.array() == h_o).all(); }

  ProtocolParams with_b(int nb) const {
    ProtocolParams p = *this;
    p.b = nb;
    return p;
  }

  ProtocolParams with_beta(Scalar nbeta) const {
    ProtocolParams p = *this;
    p.beta = nbeta;
    return p;
  }

  template <typename Other>
  ProtocolParams<Other> cast() const {
    ProtocolParams<Other> p;
    p.L = L;
    p.h_o = h_o;
    p.m_o = m_o;
    p.beta = Other(beta);
    p.b = b;
    return p;
  }

  bool operator==(const ProtocolParams& o) const {
    return L == o.L && h_o == o.h_o && b == o.b && beta == o.beta && m_o == o.m_o;
  }
};

/// Prescribed action of a server meeting a client.
template <typename Scalar>
Action social_strategy(const ProtocolParams<Scalar>& params, Reputation server, Reputation client) {
  if (server.value < params.h_o) return Action::NotServe;
  return client.value >= params.service_threshold(server.value) ? Action::Serve : Action::NotServe;
}

/// Compliance bit reported for one transaction: 0 when the action matches the
/// prescribed one.
template <typename Scalar>
int phi_compliance(const ProtocolParams<Scalar>& params, Reputation server, Reputation client,
                   Action taken) {
  return taken == social_strategy(params, server, client) ? 0 : 1;
}

/// Period-end reputation update. `forgiven` is only consulted when x = 1.
template <typename Scalar>
Reputation reputation_update(const ProtocolParams<Scalar>& params, Reputation rep, int x,
                             bool forgiven) {
  if (x == 0) return Reputation(std::min(params.L, rep.value + 1));
  return forgiven ? rep : Reputation(0);
}

/// Probability that a punished peer at `level` keeps its reputation.
template <typename Scalar>
Scalar forgiveness_prob(const ProtocolParams<Scalar>& params, int level) {
  using std::pow;
  if (params.beta == Scalar(0)) return Scalar(0);
  return pow(params.beta, Scalar(params.L - level + 1));
}

/// Probability that a compliant active peer is punished because at least one
/// of its lambda*b uploads failed.
template <typename Scalar>
Scalar error_punish_prob(const NetworkEnv<Scalar>& env, int b) {
  using std::pow;
  return Scalar(1) - pow(Scalar(1) - env.eps, env.requests(b));
}

/// Integer number of transactions used by the simulator for lambda*b.
template <typename Scalar>
int transactions_per_period(const NetworkEnv<Scalar>& env, int b) {
  return static_cast<int>(std::lround(static_cast<double>(env.requests(b))));
}

}  // namespace normforge
