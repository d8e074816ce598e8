#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace distill {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for (seed, tags...), e.g. (global seed, epoch, step).
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(seed);
  for (auto t : tags) h = splitmix64(h ^ t);
  return Rng(h);
}

// Stream tags so that consumers never share a sequence.
namespace stream {
inline constexpr std::uint64_t init = 0x696e6974;
inline constexpr std::uint64_t shuffle = 0x73687566;
inline constexpr std::uint64_t dropout = 0x64726f70;
inline constexpr std::uint64_t sampling = 0x73616d70;
inline constexpr std::uint64_t data = 0x64617461;
}  // namespace stream

}  // namespace distill
