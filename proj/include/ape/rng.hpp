#pragma once

#include <cstdint>
#include <random>

namespace ape {

// Deterministic pseudo-random source. One root seed comes from the config;
// every stochastic consumer (init, dropout, noise, shuffling) works on its
// own derived stream so that disabling one consumer does not shift the
// randomness seen by the others.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  // Independent stream keyed by (seed, a, b). splitmix64 mixing.
  Rng derive(std::uint64_t a, std::uint64_t b = 0) const {
    std::uint64_t s = seed_;
    s = mix(s ^ mix(a + 0x9e3779b97f4a7c15ull));
    s = mix(s ^ mix(b + 0xbf58476d1ce4e5b9ull));
    return Rng(s);
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double gaussian() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

}  // namespace ape
