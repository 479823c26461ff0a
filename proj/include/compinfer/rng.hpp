#pragma once
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace compinfer {

// Mixer from the splitmix64 generator; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for stream `index` of a run seeded with `base`. Stable under any thread
// count or evaluation order, so per-record simulation is reproducible.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return mix64(base + 0x9e3779b97f4a7c15ULL * (index + 1));
}

// Deterministic RNG. std::mt19937_64 for the raw stream, but with our own
// uniform/normal transforms: the std distributions are not bit-stable across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }  // [0, 1)

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with caching.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(6.283185307179586477 * u2);
    have_spare_ = true;
    return r * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  // Integer in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Index sampled proportionally to non-negative weights (at least one > 0).
  int categorical(const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
      acc += w[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(w.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace compinfer
