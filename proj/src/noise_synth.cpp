#include "regiondiff/noise_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace regiondiff {

DegradationKind parse_degradation_kind(std::string_view name) {
  if (name == "gaussian_additive" || name == "gaussian") return DegradationKind::gaussian_additive;
  if (name == "gamma_speckle" || name == "gamma") return DegradationKind::gamma_speckle;
  throw std::invalid_argument("unknown degradation kind '" + std::string(name) + "'");
}

std::string_view to_string(DegradationKind kind) {
  return kind == DegradationKind::gaussian_additive ? "gaussian_additive" : "gamma_speckle";
}

void DegradationSpec::validate() const {
  if (!(sigma >= 0.0)) throw std::invalid_argument("degradation sigma must be >= 0");
  if (looks < 1) throw std::invalid_argument("degradation looks must be >= 1");
}

template <typename Scalar>
ImageGrid<Scalar> degrade_unclamped(const ImageGrid<Scalar>& x0, const DegradationSpec& spec, Rng& rng) {
  spec.validate();
  ImageGrid<Scalar> out = x0;
  Scalar* p = out.data();
  if (spec.kind == DegradationKind::gaussian_additive) {
    if (spec.sigma == 0.0) return out;
    std::normal_distribution<double> normal(0.0, spec.sigma);
    for (Index i = 0; i < out.size(); ++i) p[i] = static_cast<Scalar>(static_cast<double>(p[i]) + normal(rng));
  } else {
    const double L = static_cast<double>(spec.looks);
    std::gamma_distribution<double> gamma(L, 1.0 / L);
    for (Index i = 0; i < out.size(); ++i) {
      const double intensity = (static_cast<double>(p[i]) + 1.0) * 0.5;
      p[i] = static_cast<Scalar>(intensity * gamma(rng) * 2.0 - 1.0);
    }
  }
  return out;
}

template <typename Scalar>
ImageGrid<Scalar> degrade(const ImageGrid<Scalar>& x0, const DegradationSpec& spec, Rng& rng) {
  return clamp_normalized(degrade_unclamped(x0, spec, rng));
}

template <typename Scalar>
ImageGrid<Scalar> degrade(const ImageGrid<Scalar>& x0, const DegradationSpec& spec) {
  Rng rng(spec.seed);
  return degrade(x0, spec, rng);
}

template <typename Scalar>
ImageGrid<Scalar> make_texture(Index height, Index width, Rng& rng, const TextureParams& params) {
  if (params.waves < 1) throw std::invalid_argument("texture needs at least one wave");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  struct Wave {
    double kx, ky, phase, weight;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < params.waves; ++i) {
    const double theta = unit(rng) * std::numbers::pi;
    const double period = params.min_period + (params.max_period - params.min_period) * unit(rng);
    const double k = 2.0 * std::numbers::pi / period;
    const double weight = 0.5 + unit(rng);
    waves.push_back({k * std::cos(theta), k * std::sin(theta), 2.0 * std::numbers::pi * unit(rng), weight});
  }
  // Per-wave amplitude so a random-phase sum has standard deviation amplitude / 2.
  double power = 0.0;
  for (const Wave& w : waves) power += 0.5 * w.weight * w.weight;
  const double scale = 0.5 * params.amplitude / std::sqrt(power);

  ImageGrid<Scalar> img(height, width, 1, ValueDomain::normalized);
  for (Index r = 0; r < height; ++r) {
    for (Index c = 0; c < width; ++c) {
      double v = 0.0;
      for (const Wave& w : waves) v += w.weight * std::sin(w.kx * c + w.ky * r + w.phase);
      img(r, c) = static_cast<Scalar>(std::clamp(scale * v, -params.amplitude, params.amplitude));
    }
  }
  return img;
}

#define REGIONDIFF_INSTANTIATE(S)                                                                   \
  template ImageGrid<S> degrade_unclamped<S>(const ImageGrid<S>&, const DegradationSpec&, Rng&);    \
  template ImageGrid<S> degrade<S>(const ImageGrid<S>&, const DegradationSpec&, Rng&);              \
  template ImageGrid<S> degrade<S>(const ImageGrid<S>&, const DegradationSpec&);                    \
  template ImageGrid<S> make_texture<S>(Index, Index, Rng&, const TextureParams&);

REGIONDIFF_INSTANTIATE(float)
REGIONDIFF_INSTANTIATE(double)
#undef REGIONDIFF_INSTANTIATE

}  // namespace regiondiff
