#include "regiondiff/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace regiondiff {

std::string_view to_string(MetricFlag flag) {
  switch (flag) {
    case MetricFlag::none: return "ok";
    case MetricFlag::infinite: return "infinite";
    case MetricFlag::undefined: return "undefined";
  }
  return "?";
}

namespace {

using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Plane plane_of(const ImageGrid<Scalar>& g, Index c) {
  return g.plane(c).template cast<double>();
}

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double center = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[static_cast<std::size_t>(i)];
  }
  for (double& v : taps) v /= sum;
  return taps;
}

/// Separable "valid" filtering: output is (H - k + 1) x (W - k + 1).
Plane filter_valid(const Plane& in, const std::vector<double>& taps) {
  const Index k = static_cast<Index>(taps.size());
  const Index oh = in.rows() - k + 1;
  const Index ow = in.cols() - k + 1;
  Plane rows_pass(in.rows(), ow);
  for (Index r = 0; r < in.rows(); ++r) {
    for (Index c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (Index i = 0; i < k; ++i) acc += taps[static_cast<std::size_t>(i)] * in(r, c + i);
      rows_pass(r, c) = acc;
    }
  }
  Plane out(oh, ow);
  for (Index r = 0; r < oh; ++r) {
    for (Index c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (Index i = 0; i < k; ++i) acc += taps[static_cast<std::size_t>(i)] * rows_pass(r + i, c);
      out(r, c) = acc;
    }
  }
  return out;
}

double ssim_global(const Plane& x, const Plane& y, double c1, double c2) {
  const double mx = x.mean();
  const double my = y.mean();
  const double sxx = (x - mx).square().mean();
  const double syy = (y - my).square().mean();
  const double sxy = ((x - mx) * (y - my)).mean();
  return ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
}

}  // namespace

template <typename Scalar>
Measurement psnr(const ImageGrid<Scalar>& a, const ImageGrid<Scalar>& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  const double mse = (a.array().template cast<double>() - b.array().template cast<double>()).square().mean();
  if (mse == 0.0) return {std::numeric_limits<double>::infinity(), MetricFlag::infinite};
  return {10.0 * std::log10(peak * peak / mse), MetricFlag::none};
}

template <typename Scalar>
double ssim(const ImageGrid<Scalar>& a, const ImageGrid<Scalar>& b, const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);
  const bool global = a.height() < params.window || a.width() < params.window;
  const std::vector<double> taps = gaussian_taps(params.window, params.sigma);

  double total = 0.0;
  for (Index ch = 0; ch < a.channels(); ++ch) {
    const Plane x = plane_of(a, ch);
    const Plane y = plane_of(b, ch);
    if (global) {
      total += ssim_global(x, y, c1, c2);
      continue;
    }
    const Plane mx = filter_valid(x, taps);
    const Plane my = filter_valid(y, taps);
    const Plane sxx = filter_valid(x * x, taps) - mx * mx;
    const Plane syy = filter_valid(y * y, taps) - my * my;
    const Plane sxy = filter_valid(x * y, taps) - mx * my;
    const Plane map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    total += map.mean();
  }
  return total / static_cast<double>(a.channels());
}

template <typename Scalar>
Measurement enl(const ImageGrid<Scalar>& img, const Rect& roi) {
  if (roi.row < 0 || roi.col < 0 || roi.height < 1 || roi.width < 1 || roi.row + roi.height > img.height() ||
      roi.col + roi.width > img.width()) {
    throw std::invalid_argument("enl: roi outside the image");
  }
  if (roi.height * roi.width < 4) throw std::invalid_argument("enl: roi needs at least 4 pixels");
  double sum = 0.0;
  double count = 0.0;
  for (Index ch = 0; ch < img.channels(); ++ch) {
    sum += img.plane(ch).block(roi.row, roi.col, roi.height, roi.width).template cast<double>().sum();
    count += static_cast<double>(roi.height * roi.width);
  }
  const double mean = sum / count;
  double ss = 0.0;
  for (Index ch = 0; ch < img.channels(); ++ch) {
    ss += (img.plane(ch).block(roi.row, roi.col, roi.height, roi.width).template cast<double>() - mean)
              .square()
              .sum();
  }
  const double var = ss / count;
  if (var == 0.0) return {std::numeric_limits<double>::infinity(), MetricFlag::infinite};
  return {mean * mean / var, MetricFlag::none};
}

namespace {

double gradient_mass(const Plane& p) {
  const Plane centered = p - p.mean();
  double mass = 0.0;
  if (p.cols() > 1) {
    mass += (centered.rightCols(p.cols() - 1) - centered.leftCols(p.cols() - 1)).abs().sum();
  }
  if (p.rows() > 1) {
    mass += (centered.bottomRows(p.rows() - 1) - centered.topRows(p.rows() - 1)).abs().sum();
  }
  return mass;
}

}  // namespace

template <typename Scalar>
Measurement epi(const ImageGrid<Scalar>& denoised, const ImageGrid<Scalar>& reference) {
  require_same_shape(denoised, reference, "epi");
  double num = 0.0;
  double den = 0.0;
  for (Index ch = 0; ch < denoised.channels(); ++ch) {
    num += gradient_mass(plane_of(denoised, ch));
    den += gradient_mass(plane_of(reference, ch));
  }
  if (den == 0.0) return {std::numeric_limits<double>::quiet_NaN(), MetricFlag::undefined};
  return {num / den, MetricFlag::none};
}

template <typename Scalar>
Measurement seam_ratio(const ImageGrid<Scalar>& img, const WindowPlan& plan) {
  if (img.height() != plan.image_height || img.width() != plan.image_width) {
    throw ShapeError("seam_ratio: image " + img.shape() + " does not match the window plan");
  }
  const Index m = plan.window;
  double seam_sum = 0.0, other_sum = 0.0;
  double seam_n = 0.0, other_n = 0.0;
  for (Index ch = 0; ch < img.channels(); ++ch) {
    const auto p = img.plane(ch);
    for (Index r = 0; r < img.height(); ++r) {
      for (Index c = 0; c + 1 < img.width(); ++c) {
        const double d = std::abs(static_cast<double>(p(r, c + 1)) - static_cast<double>(p(r, c)));
        if ((c + 1) % m == 0) {
          seam_sum += d;
          seam_n += 1.0;
        } else {
          other_sum += d;
          other_n += 1.0;
        }
      }
    }
    for (Index r = 0; r + 1 < img.height(); ++r) {
      for (Index c = 0; c < img.width(); ++c) {
        const double d = std::abs(static_cast<double>(p(r + 1, c)) - static_cast<double>(p(r, c)));
        if ((r + 1) % m == 0) {
          seam_sum += d;
          seam_n += 1.0;
        } else {
          other_sum += d;
          other_n += 1.0;
        }
      }
    }
  }
  if (seam_n == 0.0 || other_n == 0.0) return {std::numeric_limits<double>::quiet_NaN(), MetricFlag::undefined};
  const double seam_mean = seam_sum / seam_n;
  const double other_mean = other_sum / other_n;
  if (other_mean == 0.0) {
    if (seam_mean == 0.0) return {std::numeric_limits<double>::quiet_NaN(), MetricFlag::undefined};
    return {std::numeric_limits<double>::infinity(), MetricFlag::infinite};
  }
  return {seam_mean / other_mean, MetricFlag::none};
}

template <typename Scalar>
ImageGrid<Scalar> to_intensity(const ImageGrid<Scalar>& g) {
  ImageGrid<Scalar> out = g;
  out.array() = (g.array() + Scalar(1)) * Scalar(0.5);
  return out;
}

namespace {

void put(std::ostream& os, std::string_view name, const Measurement& m) {
  os << name << ' ' << m.value << ' ' << to_string(m.flag) << '\n';
}

void put_csv(std::ostream& os, const std::optional<Measurement>& m) {
  os << ',';
  if (m && m->ok()) os << m->value;
  os << ',';
  if (m) os << to_string(m->flag);
}

}  // namespace

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  if (psnr_db) put(os, "psnr_db", *psnr_db);
  if (ssim_percent) os << "ssim_percent " << *ssim_percent << " ok\n";
  if (enl) put(os, "enl", *enl);
  if (epi) put(os, "epi", *epi);
  if (seam_ratio) put(os, "seam_ratio", *seam_ratio);
  if (roi) os << "roi " << roi->row << ' ' << roi->col << ' ' << roi->height << ' ' << roi->width << '\n';
  return os.str();
}

std::string MetricsReport::csv_header() {
  return "image,psnr_db,psnr_flag,ssim_percent,enl,enl_flag,epi,epi_flag,seam_ratio,seam_flag";
}

std::string MetricsReport::csv_row(std::string_view image) const {
  std::ostringstream os;
  os.precision(10);
  os << image;
  put_csv(os, psnr_db);
  os << ',';
  if (ssim_percent) os << *ssim_percent;
  put_csv(os, enl);
  put_csv(os, epi);
  put_csv(os, seam_ratio);
  return os.str();
}

template <typename Scalar>
MetricsReport evaluate(const ImageGrid<Scalar>& restored, const ImageGrid<Scalar>* reference,
                       const EvaluateOptions& options) {
  MetricsReport report;
  const ImageGrid<Scalar> r = to_intensity(restored);
  if (reference) {
    const ImageGrid<Scalar> ref = to_intensity(*reference);
    report.psnr_db = psnr(r, ref, 1.0);
    report.ssim_percent = 100.0 * ssim(r, ref);
    report.epi = epi(r, ref);
  }
  if (options.roi) {
    report.enl = enl(r, *options.roi);
    report.roi = options.roi;
  }
  if (options.plan) report.seam_ratio = seam_ratio(r, *options.plan);
  return report;
}

#define REGIONDIFF_INSTANTIATE(S)                                                                      \
  template Measurement psnr<S>(const ImageGrid<S>&, const ImageGrid<S>&, double);                       \
  template double ssim<S>(const ImageGrid<S>&, const ImageGrid<S>&, const SsimParams&);                 \
  template Measurement enl<S>(const ImageGrid<S>&, const Rect&);                                       \
  template Measurement epi<S>(const ImageGrid<S>&, const ImageGrid<S>&);                               \
  template Measurement seam_ratio<S>(const ImageGrid<S>&, const WindowPlan&);                          \
  template ImageGrid<S> to_intensity<S>(const ImageGrid<S>&);                                          \
  template MetricsReport evaluate<S>(const ImageGrid<S>&, const ImageGrid<S>*, const EvaluateOptions&);

REGIONDIFF_INSTANTIATE(float)
REGIONDIFF_INSTANTIATE(double)
#undef REGIONDIFF_INSTANTIATE

}  // namespace regiondiff
