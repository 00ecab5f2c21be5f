#pragma once

#include "regiondiff/image_grid.hpp"
#include "regiondiff/random.hpp"

#include <cstdint>
#include <string_view>

namespace regiondiff {

enum class DegradationKind { gaussian_additive, gamma_speckle };

DegradationKind parse_degradation_kind(std::string_view name);
std::string_view to_string(DegradationKind kind);

struct DegradationSpec {
  DegradationKind kind = DegradationKind::gaussian_additive;
  double sigma = 0.0;  // normalized units
  int looks = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// gaussian_additive: x0 + sigma * N(0, 1).
/// gamma_speckle: intensity (x0 + 1) / 2 times Gamma(L, 1/L) noise, mapped back.
/// Both clamp the result to [-1, 1].
template <typename Scalar>
ImageGrid<Scalar> degrade(const ImageGrid<Scalar>& x0, const DegradationSpec& spec, Rng& rng);

/// Same, drawing from a generator seeded with spec.seed.
template <typename Scalar>
ImageGrid<Scalar> degrade(const ImageGrid<Scalar>& x0, const DegradationSpec& spec);

/// Pre-clamp values of degrade(); exposes the unbiased noise model.
template <typename Scalar>
ImageGrid<Scalar> degrade_unclamped(const ImageGrid<Scalar>& x0, const DegradationSpec& spec, Rng& rng);

struct TextureParams {
  int waves = 6;
  double min_period = 16.0;
  double max_period = 64.0;
  double amplitude = 0.7;  // peak of the summed field before clamping
};

/// Smooth synthetic scene: a sum of randomly oriented plane waves with random
/// periods and phases, scaled into [-amplitude, amplitude]. Statistically
/// stationary, so no image location is special.
template <typename Scalar>
ImageGrid<Scalar> make_texture(Index height, Index width, Rng& rng, const TextureParams& params = {});

}  // namespace regiondiff
