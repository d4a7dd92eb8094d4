#include "simeval/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace simeval {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(root) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

std::uint64_t uniform_below(Prng& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  // Rejection sampling on the largest multiple of bound.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return draw % bound;
}

double uniform_unit(Prng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(Prng& rng) {
  const double u1 = 1.0 - uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace simeval
