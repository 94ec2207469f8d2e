#include "rest/random.hpp"

#include <cmath>

namespace rest {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

double Rng::poisson(double lambda) {
  if (lambda <= 0.0) return 0.0;
  if (lambda < 10.0) {
    const double u = uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    int k = 0;
    while (u > cdf && k < 1000) {
      ++k;
      p *= lambda / k;
      cdf += p;
    }
    return k;
  }
  const double draw = std::round(lambda + std::sqrt(lambda) * normal());
  return draw < 0.0 ? 0.0 : draw;
}

}  // namespace rest
