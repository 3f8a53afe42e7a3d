#pragma once

#include <cstdint>
#include <random>

namespace par {

/// Named random sub-streams derived from one run seed.
enum class Stream : std::uint64_t { kInit = 1, kSampling = 2, kDropout = 3, kEval = 4, kValidation = 5, kDump = 6 };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for (seed, stream, a, b); the same tuple always
/// yields the same sequence.
inline std::mt19937_64 substream(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return std::mt19937_64(h);
}

}  // namespace par
