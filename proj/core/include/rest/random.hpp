#pragma once

#include <cstdint>
#include <random>

namespace rest {

// SplitMix64 finaliser.
std::uint64_t splitmix64(std::uint64_t x);

// Seed of an independent sub-stream: splitmix64(seed ^ splitmix64(stream)).
// Used wherever per-batch / per-cell / per-subsystem seeds are needed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t next() { return engine_(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  // Sequential-search inversion below lambda = 10, rounded normal
  // approximation (clamped at 0) from 10 upwards.
  double poisson(double lambda);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace rest
