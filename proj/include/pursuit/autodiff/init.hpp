#pragma once

#include <cstddef>
#include <random>
#include <vector>

namespace pursuit::ad {

/// n draws from U(-bound, bound).
inline std::vector<double> uniform_values(std::size_t n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

}  // namespace pursuit::ad
