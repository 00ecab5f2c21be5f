#include "regiondiff/sampler.hpp"

#include <string>

namespace regiondiff {

void SamplerConfig::validate(const NoiseSchedule& s) const {
  if (num_inference_steps < 1) throw std::invalid_argument("num_inference_steps must be >= 1");
  if (num_inference_steps > s.steps()) {
    throw std::invalid_argument("num_inference_steps " + std::to_string(num_inference_steps) +
                                " exceeds schedule length " + std::to_string(s.steps()));
  }
  if (kind == SamplerKind::ddpm && num_inference_steps != s.steps()) {
    throw std::invalid_argument("ddpm visits every timestep; num_inference_steps must equal T");
  }
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1]");
}

SamplerKind parse_sampler_kind(std::string_view name) {
  if (name == "ddpm") return SamplerKind::ddpm;
  if (name == "ddim") return SamplerKind::ddim;
  throw std::invalid_argument("unknown sampler '" + std::string(name) + "'");
}

VarianceChoice parse_variance_choice(std::string_view name) {
  if (name == "beta") return VarianceChoice::beta;
  if (name == "posterior") return VarianceChoice::posterior;
  throw std::invalid_argument("unknown variance choice '" + std::string(name) + "'");
}

std::string_view to_string(SamplerKind kind) { return kind == SamplerKind::ddpm ? "ddpm" : "ddim"; }

std::string_view to_string(VarianceChoice choice) {
  return choice == VarianceChoice::beta ? "beta" : "posterior";
}

double step_variance(int t, const NoiseSchedule& s, VarianceChoice choice) {
  return choice == VarianceChoice::beta ? s.beta(t) : s.posterior_variance(t);
}

double ddim_sigma(int t, int t_prev, const NoiseSchedule& s, double eta) {
  s.check_timestep(t);
  if (t_prev < 0 || t_prev >= t) throw std::invalid_argument("ddim_step: t_prev must satisfy 0 <= t_prev < t");
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("ddim_step: eta must lie in [0, 1]");
  if (eta == 0.0) return 0.0;
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

std::vector<int> inference_timesteps(const NoiseSchedule& s, const SamplerConfig& cfg) {
  cfg.validate(s);
  const int T = s.steps();
  const int k = cfg.num_inference_steps;
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(k));
  if (cfg.kind == SamplerKind::ddpm || k == T) {
    for (int t = T; t >= 1; --t) ts.push_back(t);
    return ts;
  }
  if (k == 1) return {T};
  // Rounded linspace over [1, T]; strictly decreasing because k <= T.
  for (int i = 0; i < k; ++i) {
    const double pos = static_cast<double>(T - 1) * static_cast<double>(k - 1 - i) / static_cast<double>(k - 1);
    ts.push_back(1 + static_cast<int>(std::lround(pos)));
  }
  return ts;
}

}  // namespace regiondiff
