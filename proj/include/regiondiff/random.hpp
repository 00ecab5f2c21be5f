#pragma once

#include "regiondiff/image_grid.hpp"

#include <cstdint>
#include <random>

namespace regiondiff {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent stream seeds from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template <typename Scalar>
void fill_standard_normal(ImageGrid<Scalar>& g, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Scalar* p = g.data();
  for (Index i = 0; i < g.size(); ++i) p[i] = static_cast<Scalar>(normal(rng));
}

template <typename Scalar>
ImageGrid<Scalar> standard_normal(Index height, Index width, Index channels, Rng& rng) {
  ImageGrid<Scalar> g(height, width, channels, ValueDomain::unconstrained);
  fill_standard_normal(g, rng);
  return g;
}

}  // namespace regiondiff
