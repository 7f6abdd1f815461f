#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

namespace fknne {

// std::shuffle and std::uniform_int_distribution are implementation-defined;
// these two helpers give the same sequence on every platform for a given seed.

/// Uniform integer in [0, bound) by rejection sampling.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - max % bound;
  std::uint64_t r;
  do r = rng(); while (r >= limit);
  return r % bound;
}

/// Fisher-Yates shuffle.
template <class T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_below(rng, i))]);
  }
}

}  // namespace fknne
