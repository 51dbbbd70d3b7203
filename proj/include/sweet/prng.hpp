#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace sweet {

// Counter-based splitmix64 generator. All sampling in the library goes
// through an explicitly threaded Prng; there is no global random state, so
// a run is reproducible bit-for-bit from its seed on any platform.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be positive.
  int next_below(int n) {
    int k = static_cast<int>(next_double() * n);
    return k < n ? k : n - 1;
  }

  // Index drawn from nonnegative weights (need not be normalized).
  int next_weighted(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double x = next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (x < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  // Standard exponential via inversion.
  double next_exponential() { return -std::log(1.0 - next_double()); }

  // Independent child stream. Distinct tags give decorrelated streams and
  // leave the parent untouched, which keeps concurrent runners deterministic.
  Prng fork(std::uint64_t tag) const {
    std::uint64_t z = state_ ^ (0x632be59bd9b4e019ull + tag * 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Prng(z ^ (z >> 31));
  }

 private:
  std::uint64_t state_;
};

}  // namespace sweet
