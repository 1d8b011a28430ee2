#pragma once

#include <cmath>
#include <cstdint>

namespace hiervid {

inline std::uint64_t splitmix64_step(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// One-shot mix of a 64-bit value (the splitmix64 output function).
inline std::uint64_t mix64(std::uint64_t x) {
  std::uint64_t s = x;
  return splitmix64_step(s);
}

inline std::uint64_t hash_coords(std::uint64_t seed, int t, int x, int y) {
  std::uint64_t h = seed;
  h = mix64(h ^ (0x100000001b3ULL * static_cast<std::uint64_t>(t + 1)));
  h = mix64(h ^ (0x100000001b3ULL * static_cast<std::uint64_t>(x + 1)));
  h = mix64(h ^ (0x100000001b3ULL * static_cast<std::uint64_t>(y + 1)));
  return h;
}

// splitmix64 generator. Fully specified arithmetic, so every draw is
// bit-identical across runs and platforms; all randomness in the project
// flows through this type.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_step(state_); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Box-Muller without a cached spare, so the draw count per call is fixed.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Independent derived stream (for per-position sampling).
  Rng fork(std::uint64_t stream) const { return Rng(mix64(state_ ^ mix64(stream))); }

 private:
  std::uint64_t state_;
};

}  // namespace hiervid
