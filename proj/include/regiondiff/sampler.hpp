#pragma once

#include "regiondiff/denoiser.hpp"
#include "regiondiff/diffusion.hpp"
#include "regiondiff/image_grid.hpp"
#include "regiondiff/random.hpp"
#include "regiondiff/schedule.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace regiondiff {

enum class SamplerKind { ddpm, ddim };

/// Reverse-step variance: beta_t, or the posterior variance beta~_t.
enum class VarianceChoice { beta, posterior };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::ddpm;
  int num_inference_steps = 1000;
  double eta = 0.0;  // DDIM only
  VarianceChoice variance = VarianceChoice::beta;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when inconsistent with `s`.
  void validate(const NoiseSchedule& s) const;
};

SamplerKind parse_sampler_kind(std::string_view name);
VarianceChoice parse_variance_choice(std::string_view name);
std::string_view to_string(SamplerKind kind);
std::string_view to_string(VarianceChoice choice);

/// sigma_t^2 of an ancestral step.
double step_variance(int t, const NoiseSchedule& s, VarianceChoice choice);

/// eta * sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev), with ab_0 = 1.
double ddim_sigma(int t, int t_prev, const NoiseSchedule& s, double eta);

/// Visited timesteps, strictly decreasing. DDPM visits T..1; DDIM with k >= 2
/// steps takes the rounded uniform grid between T and 1, so both ends are
/// always present. k = 1 visits only T.
std::vector<int> inference_timesteps(const NoiseSchedule& s, const SamplerConfig& cfg);

/// One ancestral step: posterior_mean + sigma_t * noise. The last step (t = 1)
/// must be deterministic, so any nonzero noise there is rejected.
template <typename Scalar>
ImageGrid<Scalar> ddpm_step(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& eps_hat, int t,
                            const NoiseSchedule& s, const ImageGrid<Scalar>& noise, VarianceChoice variance) {
  require_same_shape(x_t, noise, "ddpm_step");
  if (t == 1 && (noise.array() != Scalar(0)).any()) {
    throw std::invalid_argument("ddpm_step: the final step (t = 1) takes no noise");
  }
  ImageGrid<Scalar> out = posterior_mean(x_t, eps_hat, t, s);
  const auto sigma = static_cast<Scalar>(std::sqrt(step_variance(t, s, variance)));
  out.array() += sigma * noise.array();
  return out;
}

/// Generalized DDIM update from t to t_prev (t_prev = 0 lands on x_0).
template <typename Scalar>
ImageGrid<Scalar> ddim_step(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& eps_hat, int t, int t_prev,
                            const NoiseSchedule& s, const ImageGrid<Scalar>& noise, double eta) {
  require_same_shape(x_t, noise, "ddim_step");
  const double sigma = ddim_sigma(t, t_prev, s, eta);
  const ImageGrid<Scalar> x0_hat = predict_x0_from_eps(x_t, eps_hat, t, s);
  const double ab_prev = s.alpha_bar(t_prev);
  const auto signal = static_cast<Scalar>(std::sqrt(ab_prev));
  const auto direction = static_cast<Scalar>(std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma)));
  ImageGrid<Scalar> out(x_t.height(), x_t.width(), x_t.channels(), ValueDomain::unconstrained);
  out.array() = signal * x0_hat.array() + direction * eps_hat.array();
  if (sigma != 0.0) out.array() += static_cast<Scalar>(sigma) * noise.array();
  return out;
}

/// Called once per visited timestep with (step index, number of steps, t).
using ProgressFn = std::function<void(int, int, int)>;

/// Runs the reverse chain from `x` (the state at t = T) using `eps_fn(x_t, t)`
/// for noise estimates and `step_rng` for step noise. The result is clamped
/// to [-1, 1]; intermediate states are not.
template <typename Scalar, typename EpsFn>
ImageGrid<Scalar> reverse_chain(ImageGrid<Scalar> x, const NoiseSchedule& s, const SamplerConfig& cfg,
                                Rng& step_rng, EpsFn&& eps_fn, const ProgressFn& progress = {}) {
  cfg.validate(s);
  x.set_domain(ValueDomain::unconstrained);
  const std::vector<int> ts = inference_timesteps(s, cfg);
  const int n = static_cast<int>(ts.size());
  ImageGrid<Scalar> noise(x.height(), x.width(), x.channels(), ValueDomain::unconstrained);
  for (int i = 0; i < n; ++i) {
    const int t = ts[i];
    if (progress) progress(i, n, t);
    const ImageGrid<Scalar> eps_hat = eps_fn(static_cast<const ImageGrid<Scalar>&>(x), t);
    if (cfg.kind == SamplerKind::ddpm) {
      if (t > 1) {
        fill_standard_normal(noise, step_rng);
      } else {
        noise.array().setZero();
      }
      x = ddpm_step(x, eps_hat, t, s, noise, cfg.variance);
    } else {
      const int t_prev = i + 1 < n ? ts[i + 1] : 0;
      if (cfg.eta > 0.0 && t_prev > 0) {
        fill_standard_normal(noise, step_rng);
      } else {
        noise.array().setZero();
      }
      x = ddim_step(x, eps_hat, t, t_prev, s, noise, cfg.eta);
    }
  }
  return clamp_normalized(std::move(x));
}

/// x_T drawn from the seed's initial-state stream; step noise from a second stream.
template <typename Scalar>
ImageGrid<Scalar> initial_state(Index height, Index width, Index channels, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0));
  return standard_normal<Scalar>(height, width, channels, rng);
}

inline Rng step_noise_rng(std::uint64_t seed) { return Rng(mix_seed(seed, 1)); }

/// Full conditional reverse diffusion over `condition` without tiling.
template <typename Scalar>
ImageGrid<Scalar> sample(const ImageGrid<Scalar>& condition, const Denoiser<Scalar>& denoiser,
                         const NoiseSchedule& s, const SamplerConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate(s);
  ImageGrid<Scalar> x_T = initial_state<Scalar>(condition.height(), condition.width(), condition.channels(), cfg.seed);
  Rng rng = step_noise_rng(cfg.seed);
  return reverse_chain(
      std::move(x_T), s, cfg, rng,
      [&](const ImageGrid<Scalar>& x_t, int t) { return denoiser.predict(x_t, condition, t, s); }, progress);
}

}  // namespace regiondiff
