#pragma once

// Counter-based random streams. A stream is addressed by (seed, owner, period,
// purpose) so that the draws of one peer never depend on how many draws other
// peers made, or on how many peers exist.

#include <cstdint>
#include <limits>

namespace normforge {

enum class Purpose : std::uint64_t { Error = 1, Forgive, Order, Route };

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Satisfies UniformRandomBitGenerator, so it plugs into <random> and
/// std::shuffle.
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr Stream(std::uint64_t seed, std::uint64_t owner, std::uint64_t period, Purpose purpose)
      : key_(mix64(mix64(mix64(mix64(seed) ^ owner) ^ period) ^ static_cast<std::uint64_t>(purpose))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() { return mix64(key_ + 0x632be59bd9b4e019ULL * ++counter_); }

  /// Uniform double in [0, 1) from the top 53 bits.
  constexpr double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  constexpr bool bernoulli(double p) { return p > 0 && uniform() < p; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Owner ids for streams that belong to the run rather than to a peer.
constexpr std::uint64_t global_owner(std::uint64_t k) { return ~std::uint64_t{0} - k; }

}  // namespace normforge
