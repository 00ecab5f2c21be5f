#include "regiondiff/regional.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace regiondiff {

namespace {

Index padded_extent(Index extent, Index window, Index stride) {
  if (extent <= window) return window;
  const Index excess = extent - window;
  return window + (excess + stride - 1) / stride * stride;
}

template <typename Scalar>
void require_plan_shape(const ImageGrid<Scalar>& g, Index h, Index w, const char* what) {
  if (g.height() != h || g.width() != w) {
    throw ShapeError(std::string(what) + ": grid " + g.shape() + " does not match the window plan (" +
                     std::to_string(h) + "x" + std::to_string(w) + ")");
  }
}

}  // namespace

WindowPlan plan_windows(Index height, Index width, Index window, Index stride) {
  if (height < 1 || width < 1) throw std::invalid_argument("plan_windows: image dimensions must be >= 1");
  if (stride < 1 || window < stride) throw std::invalid_argument("plan_windows: need window >= stride >= 1");
  if (window % stride != 0) {
    throw std::invalid_argument("plan_windows: window " + std::to_string(window) + " is not a multiple of stride " +
                                std::to_string(stride));
  }
  WindowPlan plan;
  plan.image_height = height;
  plan.image_width = width;
  plan.window = window;
  plan.stride = stride;
  plan.padded_height = padded_extent(height, window, stride);
  plan.padded_width = padded_extent(width, window, stride);

  for (Index r = 0; r + window <= plan.padded_height; r += stride) {
    for (Index c = 0; c + window <= plan.padded_width; c += stride) plan.origins.push_back({r, c});
  }
  plan.coverage = CoverageGrid::Zero(plan.padded_height, plan.padded_width);
  for (const WindowOrigin& o : plan.origins) plan.coverage.block(o.row, o.col, window, window) += 1;
  return plan;
}

template <typename Scalar>
RegionalEngine<Scalar>::RegionalEngine(const Denoiser<Scalar>& model, WindowPlan plan, int workers)
    : model_(model), plan_(std::move(plan)), pool_(std::make_unique<WorkerPool>(workers)) {}

template <typename Scalar>
ImageGrid<Scalar> RegionalEngine<Scalar>::epsilon_padded(const ImageGrid<Scalar>& x_padded,
                                                         const ImageGrid<Scalar>& condition_padded, int t,
                                                         const NoiseSchedule& s) const {
  require_plan_shape(x_padded, plan_.padded_height, plan_.padded_width, "regional_epsilon");
  require_same_shape(x_padded, condition_padded, "regional_epsilon");
  s.check_timestep(t);

  const Index m = plan_.window;
  const Index channels = x_padded.channels();
  ImageGrid<Scalar> sum(plan_.padded_height, plan_.padded_width, channels, ValueDomain::unconstrained);

  const int batch = pool_->size();
  std::vector<std::optional<ImageGrid<Scalar>>> slots(static_cast<std::size_t>(batch));
  const Index count = plan_.window_count();
  for (Index first = 0; first < count; first += batch) {
    const int in_batch = static_cast<int>(std::min<Index>(batch, count - first));
    pool_->run(in_batch, [&](int i) {
      const WindowOrigin& o = plan_.origins[static_cast<std::size_t>(first + i)];
      slots[static_cast<std::size_t>(i)].emplace(model_.predict(crop(x_padded, o.row, o.col, m, m),
                                                                crop(condition_padded, o.row, o.col, m, m), t, s));
    });
    for (int i = 0; i < in_batch; ++i) {
      const WindowOrigin& o = plan_.origins[static_cast<std::size_t>(first + i)];
      auto& est = *slots[static_cast<std::size_t>(i)];
      if (est.height() != m || est.width() != m || est.channels() != channels) {
        throw ShapeError("regional_epsilon: denoiser returned " + est.shape() + " for a window");
      }
      for (Index c = 0; c < channels; ++c) sum.plane(c).block(o.row, o.col, m, m) += est.plane(c);
      slots[static_cast<std::size_t>(i)].reset();
    }
  }
  const auto coverage = plan_.coverage.template cast<Scalar>();
  for (Index c = 0; c < channels; ++c) sum.plane(c) /= coverage;
  return sum;
}

template <typename Scalar>
ImageGrid<Scalar> RegionalEngine<Scalar>::epsilon(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& condition,
                                                  int t, const NoiseSchedule& s) const {
  require_plan_shape(x_t, plan_.image_height, plan_.image_width, "regional_epsilon");
  require_same_shape(x_t, condition, "regional_epsilon");
  const Index pb = plan_.pad_bottom();
  const Index pr = plan_.pad_right();
  if (pb == 0 && pr == 0) return epsilon_padded(x_t, condition, t, s);
  const ImageGrid<Scalar> eps =
      epsilon_padded(pad_reflect(x_t, pb, pr), pad_reflect(condition, pb, pr), t, s);
  return crop(eps, 0, 0, plan_.image_height, plan_.image_width);
}

template <typename Scalar>
ImageGrid<Scalar> regional_epsilon(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& condition, int t,
                                   const Denoiser<Scalar>& model, const WindowPlan& plan, const NoiseSchedule& s,
                                   int workers) {
  return RegionalEngine<Scalar>(model, plan, workers).epsilon(x_t, condition, t, s);
}

template <typename Scalar>
ImageGrid<Scalar> regional_sample_step(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& condition, int t,
                                       const Denoiser<Scalar>& model, const WindowPlan& plan, const NoiseSchedule& s,
                                       const ImageGrid<Scalar>& noise, const SamplerConfig& cfg, int workers) {
  const ImageGrid<Scalar> eps = regional_epsilon(x_t, condition, t, model, plan, s, workers);
  return ddpm_step(x_t, eps, t, s, noise, cfg.variance);
}

template <typename Scalar>
ImageGrid<Scalar> regional_despeckle(const ImageGrid<Scalar>& condition, const Denoiser<Scalar>& model,
                                     const NoiseSchedule& s, const SamplerConfig& cfg, Index window, Index stride,
                                     int workers, const ProgressFn& progress) {
  cfg.validate(s);
  const RegionalEngine<Scalar> engine(model, plan_windows(condition.height(), condition.width(), window, stride),
                                      workers);
  ImageGrid<Scalar> x_T =
      initial_state<Scalar>(condition.height(), condition.width(), condition.channels(), cfg.seed);
  Rng rng = step_noise_rng(cfg.seed);
  return reverse_chain(
      std::move(x_T), s, cfg, rng,
      [&](const ImageGrid<Scalar>& x_t, int t) { return engine.epsilon(x_t, condition, t, s); }, progress);
}

template <typename Scalar>
ImageGrid<Scalar> blockwise_despeckle(const ImageGrid<Scalar>& condition, const Denoiser<Scalar>& model,
                                      const NoiseSchedule& s, const SamplerConfig& cfg, Index block) {
  if (block < 1) throw std::invalid_argument("blockwise_despeckle: block must be >= 1");
  const Index ph = (condition.height() + block - 1) / block * block;
  const Index pw = (condition.width() + block - 1) / block * block;
  const ImageGrid<Scalar> padded =
      pad_reflect(condition, ph - condition.height(), pw - condition.width());
  ImageGrid<Scalar> out(ph, pw, condition.channels(), ValueDomain::normalized);
  std::uint64_t k = 0;
  for (Index r = 0; r < ph; r += block) {
    for (Index c = 0; c < pw; c += block, ++k) {
      SamplerConfig block_cfg = cfg;
      block_cfg.seed = mix_seed(cfg.seed, 1000 + k);
      const ImageGrid<Scalar> restored = sample(crop(padded, r, c, block, block), model, s, block_cfg);
      for (Index ch = 0; ch < out.channels(); ++ch) out.plane(ch).block(r, c, block, block) = restored.plane(ch);
    }
  }
  return crop(out, 0, 0, condition.height(), condition.width());
}

#define REGIONDIFF_INSTANTIATE(S)                                                                             \
  template class RegionalEngine<S>;                                                                           \
  template ImageGrid<S> regional_epsilon<S>(const ImageGrid<S>&, const ImageGrid<S>&, int, const Denoiser<S>&, \
                                            const WindowPlan&, const NoiseSchedule&, int);                    \
  template ImageGrid<S> regional_sample_step<S>(const ImageGrid<S>&, const ImageGrid<S>&, int,                 \
                                                const Denoiser<S>&, const WindowPlan&, const NoiseSchedule&,   \
                                                const ImageGrid<S>&, const SamplerConfig&, int);              \
  template ImageGrid<S> regional_despeckle<S>(const ImageGrid<S>&, const Denoiser<S>&, const NoiseSchedule&,   \
                                              const SamplerConfig&, Index, Index, int, const ProgressFn&);    \
  template ImageGrid<S> blockwise_despeckle<S>(const ImageGrid<S>&, const Denoiser<S>&, const NoiseSchedule&,  \
                                               const SamplerConfig&, Index);

REGIONDIFF_INSTANTIATE(float)
REGIONDIFF_INSTANTIATE(double)
#undef REGIONDIFF_INSTANTIATE

}  // namespace regiondiff
