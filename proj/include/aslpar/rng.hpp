#pragma once

#include <cstdint>
#include <random>

namespace aslpar {

/// SplitMix64 finaliser; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30U)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27U)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31U);
}

/// Seed of the child stream `index` under `parent`. Streams are keyed by
/// position, so e.g. sample i's stream does not depend on batch composition.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return mix_seed(mix_seed(parent) ^ mix_seed(index + 0x5851F42D4C957F2DULL));
}

/// Named stream tags for derive_seed.
enum class Stream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kLabels = 3,
  kNoise = 4,
  kData = 5,
  kRandomStart = 6,
};

constexpr std::uint64_t derive_seed(std::uint64_t parent, Stream stream) {
  return derive_seed(parent, static_cast<std::uint64_t>(stream) * 0x100000001B3ULL);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(mix_seed(seed)); }

}  // namespace aslpar
