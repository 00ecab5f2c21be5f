#pragma once

// Regional restoration: the noise estimate for an arbitrarily large image is
// assembled from m x m windows visited with stride n. Every window is
// evaluated independently, overlapping estimates are averaged per pixel, and
// one global reverse step is taken with that fused estimate.

#include "regiondiff/denoiser.hpp"
#include "regiondiff/image_grid.hpp"
#include "regiondiff/sampler.hpp"
#include "regiondiff/schedule.hpp"
#include "regiondiff/worker_pool.hpp"

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <vector>

namespace regiondiff {

inline constexpr Index kDefaultWindow = 64;
inline constexpr Index kDefaultStride = 16;

struct WindowOrigin {
  Index row;
  Index col;
  auto operator<=>(const WindowOrigin&) const = default;
};

using CoverageGrid = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Window layout over the bottom/right reflection-padded image. Origins are
/// row-major; coverage has the padded shape.
struct WindowPlan {
  Index image_height = 0;
  Index image_width = 0;
  Index padded_height = 0;
  Index padded_width = 0;
  Index window = 0;
  Index stride = 0;
  std::vector<WindowOrigin> origins;
  CoverageGrid coverage;

  Index pad_bottom() const { return padded_height - image_height; }
  Index pad_right() const { return padded_width - image_width; }
  Index window_count() const { return static_cast<Index>(origins.size()); }
};

/// Pads so that the padded extent is >= m and (extent - m) is a multiple of n,
/// then places windows at every multiple of n. Requires m >= n >= 1, m % n == 0.
WindowPlan plan_windows(Index height, Index width, Index window = kDefaultWindow, Index stride = kDefaultStride);

/// Evaluates the windows of one plan against one denoiser. Window batches run
/// on the worker pool into per-slot scratch; the accumulation into the global
/// sum is always row-major over windows, so the result does not depend on the
/// worker count. Live memory is the padded global grids plus one window of
/// scratch per worker.
template <typename Scalar>
class RegionalEngine {
 public:
  RegionalEngine(const Denoiser<Scalar>& model, WindowPlan plan, int workers = 1);

  const WindowPlan& plan() const { return plan_; }
  int workers() const { return pool_->size(); }

  /// Overlap-averaged estimate on the padded grid (inputs already padded).
  ImageGrid<Scalar> epsilon_padded(const ImageGrid<Scalar>& x_padded, const ImageGrid<Scalar>& condition_padded,
                                   int t, const NoiseSchedule& s) const;

  /// Pads, averages, crops: the fused estimate with the shape of `x_t`.
  ImageGrid<Scalar> epsilon(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& condition, int t,
                            const NoiseSchedule& s) const;

 private:
  const Denoiser<Scalar>& model_;
  WindowPlan plan_;
  std::unique_ptr<WorkerPool> pool_;
};

template <typename Scalar>
ImageGrid<Scalar> regional_epsilon(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& condition, int t,
                                   const Denoiser<Scalar>& model, const WindowPlan& plan, const NoiseSchedule& s,
                                   int workers = 1);

/// One global ancestral step driven by the fused estimate. `noise` covers the
/// whole image and must be zero at t = 1.
template <typename Scalar>
ImageGrid<Scalar> regional_sample_step(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& condition, int t,
                                       const Denoiser<Scalar>& model, const WindowPlan& plan, const NoiseSchedule& s,
                                       const ImageGrid<Scalar>& noise, const SamplerConfig& cfg, int workers = 1);

/// Full reverse chain over an image of any size. Uses the same seed streams
/// as sample(), so a single-window plan reproduces it bit for bit.
template <typename Scalar>
ImageGrid<Scalar> regional_despeckle(const ImageGrid<Scalar>& condition, const Denoiser<Scalar>& model,
                                     const NoiseSchedule& s, const SamplerConfig& cfg, Index window = kDefaultWindow,
                                     Index stride = kDefaultStride, int workers = 1, const ProgressFn& progress = {});

/// Baseline without overlap: pads to whole blocks, runs an independent chain
/// per block (seeded per block), stitches and crops.
template <typename Scalar>
ImageGrid<Scalar> blockwise_despeckle(const ImageGrid<Scalar>& condition, const Denoiser<Scalar>& model,
                                      const NoiseSchedule& s, const SamplerConfig& cfg, Index block = kDefaultWindow);

}  // namespace regiondiff
