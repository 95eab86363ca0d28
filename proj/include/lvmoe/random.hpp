#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace lvmoe {

using Rng = std::mt19937_64;

/// Generator seeded from a tuple of integers (base seed, stream indices...).
/// Distinct tuples give independent, reproducible streams.
inline Rng make_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * keys.size() + 1);
  words.push_back(static_cast<std::uint32_t>(keys.size()));
  for (std::uint64_t k : keys) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Derived 64-bit seed for a sub-stream.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
  Rng rng = make_rng(keys);
  return rng();
}

}  // namespace lvmoe
