#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace kinspray {

/// SplitMix64 step; the mixing function behind the substream derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Deterministic counter-based random stream.
///
/// Substream derivation: the raw 64-bit word at counter i of the stream
/// (master, run, tag) is
///
///   word_i = mix(mix(mix(master) ^ run') ^ tag') + i applied through
///            SplitMix64's output function,
///
/// concretely: a SplitMix64 sequence seeded with
/// h(h(h(master) xor run * C1) xor tag * C2), C1, C2 odd constants, where h
/// is one SplitMix64 round. Each (master seed, run index, tag) pair therefore
/// names a reproducible stream, independent of thread scheduling. The same
/// derivation can be reproduced in any language with 64-bit integers; only
/// determinism per implementation is promised for the downstream doubles.
class RngStream {
 public:
  RngStream(std::uint64_t master, std::uint64_t run, std::uint64_t tag = 0) {
    std::uint64_t s = master;
    std::uint64_t a = splitmix64(s);
    s = a ^ (run * 0xA24BAED4963EE407ULL + 0x9FB21C651E98DF25ULL);
    a = splitmix64(s);
    s = a ^ (tag * 0xD6E8FEB86659FD93ULL + 0x2545F4914F6CDD1DULL);
    state_ = splitmix64(s);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in (0, 1); never returns 0 or 1 exactly.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double exponential(double rate = 1.0) {
    return -std::log(uniform()) / rate;
  }

  /// Standard normal, Box-Muller; the spare value is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

 private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace kinspray
