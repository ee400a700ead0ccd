#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ds4d {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so draws can be addressed directly and never
/// depend on how many values were consumed before them.
class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t bits(std::uint64_t counter) const {
    std::uint64_t k = mix(seed_ ^ 0x6A09E667F3BCC909ULL);
    k = mix(k ^ (stream_ + 0xBB67AE8584CAA73BULL));
    return mix(k ^ (counter * 0x9E3779B97F4A7C15ULL + 0x3C6EF372FE94F82BULL));
  }

  /// Uniform in [0, 1).
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  double uniform(std::uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(counter);
  }

  /// Standard normal via Box-Muller on counters 2c and 2c+1.
  double normal(std::uint64_t counter) const {
    const double u1 = 1.0 - uniform(2 * counter);  // (0, 1]
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace ds4d
