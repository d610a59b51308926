#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace parlm {

// Deterministic, platform-stable RNG used for every stochastic decision in
// the toolkit (splits, degradations, synthetic rendering, weight init,
// batch shuffling). The generator is splitmix64, the bounded draw uses
// rejection sampling, uniform01 takes the top 53 bits, and normal() is
// Box-Muller. All of these are fully specified, so the same seed yields
// the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Unbiased draw in [0, n).
  std::uint64_t bounded(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Independent stream derived from this seed and a stream index; used for
  // per-record randomness so record order never matters.
  Rng derive(std::uint64_t stream) const {
    Rng mix(state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
    return Rng(mix.next());
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace parlm
