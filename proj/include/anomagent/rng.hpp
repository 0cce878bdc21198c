#pragma once

#include <cstdint>

// Deterministic seed mixing. All stochastic choices in the artifact go
// through these helpers so that a (seed, salt) pair fully determines the
// outcome on every platform; no implementation-defined distributions.

namespace anomagent::rng {

// splitmix64 finalizer
inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// top 53 bits mapped to [0, 1)
inline double to_unit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace anomagent::rng
