#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace simeval {

/// 64-bit mixing function used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Seed for stream `stream` under `root`. Stable across platforms.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) noexcept;

using Prng = std::mt19937_64;

/// Unbiased integer in [0, bound). The standard distributions are not
/// portable across library implementations, so sampling code uses this.
std::uint64_t uniform_below(Prng& rng, std::uint64_t bound);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform_unit(Prng& rng);

/// Standard normal draw by the Box-Muller transform.
double standard_normal(Prng& rng);

/// Fisher-Yates shuffle built on uniform_below.
template <typename T>
void portable_shuffle(std::span<T> items, Prng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace simeval
