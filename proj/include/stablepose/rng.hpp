#pragma once

// Seeded random streams with a fixed bit-level mapping from engine output to
// doubles, so that files produced by seeded commands are byte-reproducible
// regardless of the standard library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace stablepose {

namespace detail {

// SplitMix64, used to derive independent substream seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Counter-based stream splitting: stream(s, i) and stream(s, j) are
  // independent for i != j and do not depend on draw order elsewhere.
  static Rng stream(std::uint64_t master_seed, std::uint64_t stream_id) {
    std::uint64_t state = master_seed;
    std::uint64_t a = detail::splitmix64(state);
    state = master_seed ^ (0x94d049bb133111ebULL * (stream_id + 1));
    std::uint64_t b = detail::splitmix64(state);
    return Rng(a ^ b);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive, rejection-free modulo bias below 2^-11.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(
                    static_cast<std::uint64_t>(uniform() * static_cast<double>(span)));
  }

  /// Standard normal via Box-Muller (pairwise, cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Eigen::VectorXd normal_vec(int n, double stddev = 1.0) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = stddev * normal();
    return v;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace stablepose
