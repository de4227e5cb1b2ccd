#pragma once

#include <cstdint>

namespace pursuit {

/// splitmix64 finaliser; derives independent stream seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(master) ^ stream) ^ index);
}

// Stream tags. Resets and evaluation never share a stream with policy
// initialisation, so every variant sees the same episodes for a given seed.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kReset = 2;
inline constexpr std::uint64_t kRollout = 3;
inline constexpr std::uint64_t kEvalReset = 4;
inline constexpr std::uint64_t kEvalEvader = 5;
}  // namespace streams

}  // namespace pursuit
