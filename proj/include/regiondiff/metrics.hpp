#pragma once

#include "regiondiff/image_grid.hpp"
#include "regiondiff/regional.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace regiondiff {

enum class MetricFlag {
  none,
  infinite,   // value is +inf (zero error / zero variance)
  undefined,  // 0/0 or no samples
};

std::string_view to_string(MetricFlag flag);

/// A metric value that may be flagged instead of finite.
struct Measurement {
  double value = 0.0;
  MetricFlag flag = MetricFlag::none;

  bool ok() const { return flag == MetricFlag::none; }
  std::optional<double> finite() const { return ok() ? std::optional<double>(value) : std::nullopt; }
};

struct Rect {
  Index row = 0;
  Index col = 0;
  Index height = 0;
  Index width = 0;
};

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// The metric functions work on raw values; evaluate() maps the [-1, 1]
// domain to [0, 1] intensities first.

/// 10 log10(peak^2 / MSE). Zero MSE gives value +inf with the infinite flag.
template <typename Scalar>
Measurement psnr(const ImageGrid<Scalar>& a, const ImageGrid<Scalar>& b, double peak = 1.0);

/// Mean local SSIM with a Gaussian window over "valid" positions, averaged
/// over channels. Images smaller than the window use whole-image statistics.
template <typename Scalar>
double ssim(const ImageGrid<Scalar>& a, const ImageGrid<Scalar>& b, const SsimParams& params = {});

/// mean^2 / population variance over `roi` (all channels). Zero variance is
/// flagged infinite.
template <typename Scalar>
Measurement enl(const ImageGrid<Scalar>& img, const Rect& roi);

/// Ratio of forward-difference gradient mass (|dh| + |dv|) of `denoised` to
/// that of `reference`, after removing each image's mean.
template <typename Scalar>
Measurement epi(const ImageGrid<Scalar>& denoised, const ImageGrid<Scalar>& reference);

/// Mean |forward difference| across the lines of the non-overlapping
/// window grid, divided by the mean over every other difference.
template <typename Scalar>
Measurement seam_ratio(const ImageGrid<Scalar>& img, const WindowPlan& plan);

template <typename Scalar>
ImageGrid<Scalar> to_intensity(const ImageGrid<Scalar>& g);

struct MetricsReport {
  std::optional<Measurement> psnr_db;
  std::optional<double> ssim_percent;
  std::optional<Measurement> enl;
  std::optional<Measurement> epi;
  std::optional<Measurement> seam_ratio;
  std::optional<Rect> roi;

  bool empty() const { return !psnr_db && !ssim_percent && !enl && !epi && !seam_ratio; }

  /// `name value flag` lines, roi last.
  std::string to_text() const;
  static std::string csv_header();
  std::string csv_row(std::string_view image) const;
};

struct EvaluateOptions {
  std::optional<Rect> roi;           // ENL region; ENL is skipped without it
  std::optional<WindowPlan> plan;    // seam ratio; skipped without it
};

/// Intensity-domain report for a restored image. `reference` enables PSNR,
/// SSIM and EPI.
template <typename Scalar>
MetricsReport evaluate(const ImageGrid<Scalar>& restored, const ImageGrid<Scalar>* reference,
                       const EvaluateOptions& options = {});

}  // namespace regiondiff
