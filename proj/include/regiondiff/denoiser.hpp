#pragma once

#include "regiondiff/image_grid.hpp"
#include "regiondiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string_view>

namespace regiondiff {

enum class DenoiserKind { oracle_gaussian, tiny_cnn, constant_zero, custom };

std::string_view to_string(DenoiserKind kind);

/// Noise estimator eps_theta(x_t, condition, t). The condition reaches the
/// model only through channel concatenation: implementations see a single
/// 2C-channel grid whose first C channels are x_t.
template <typename Scalar>
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual DenoiserKind kind() const = 0;

  /// Noise estimate with C channels for a 2C-channel (x_t || condition) grid.
  virtual ImageGrid<Scalar> estimate(const ImageGrid<Scalar>& concat_input, int t,
                                     const NoiseSchedule& s) const = 0;

  ImageGrid<Scalar> predict(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& condition, int t,
                            const NoiseSchedule& s) const {
    s.check_timestep(t);
    if (!x_t.same_shape(condition)) {
      throw ShapeError("predict: x_t " + x_t.shape() + " vs condition " + condition.shape());
    }
    ImageGrid<Scalar> out = estimate(concat_channels(x_t, condition), t, s);
    out.set_domain(ValueDomain::unconstrained);
    return out;
  }
};

template <typename Scalar>
class ConstantZeroDenoiser final : public Denoiser<Scalar> {
 public:
  DenoiserKind kind() const override { return DenoiserKind::constant_zero; }
  ImageGrid<Scalar> estimate(const ImageGrid<Scalar>& in, int, const NoiseSchedule&) const override {
    return ImageGrid<Scalar>(in.height(), in.width(), in.channels() / 2, ValueDomain::unconstrained);
  }
};

/// Scalar Gaussian prior x0 ~ N(mu0, s0_sq) broadcast over every pixel.
struct OracleGaussianPrior {
  double mu0 = 0.0;
  double s0_sq = 1.0;
};

/// Exact MMSE noise estimate under an i.i.d. Gaussian data prior; ignores
/// the condition channels. With E[x0 | x_t] = (sqrt(ab) s0^2 x_t + (1 - ab) mu0) / (ab s0^2 + 1 - ab)
/// the estimate reduces to eps_hat = (x_t - sqrt(ab) mu0) sqrt(1 - ab) / (ab s0^2 + 1 - ab).
template <typename Scalar>
class OracleGaussianDenoiser final : public Denoiser<Scalar> {
 public:
  explicit OracleGaussianDenoiser(OracleGaussianPrior prior) : prior_(prior) {
    if (!(prior.s0_sq > 0.0)) throw std::invalid_argument("oracle prior variance must be positive");
  }

  DenoiserKind kind() const override { return DenoiserKind::oracle_gaussian; }
  const OracleGaussianPrior& prior() const { return prior_; }

  /// eps_hat = slope * (x_t - center).
  struct Affine {
    double slope;
    double center;
  };

  Affine coefficients(int t, const NoiseSchedule& s) const {
    const double ab = s.alpha_bar(t);
    const double denom = ab * prior_.s0_sq + 1.0 - ab;
    return {std::sqrt(1.0 - ab) / denom, std::sqrt(ab) * prior_.mu0};
  }

  /// E[x0 | x_t] for a scalar x_t.
  double posterior_x0(double x_t, int t, const NoiseSchedule& s) const {
    const double ab = s.alpha_bar(t);
    return (std::sqrt(ab) * prior_.s0_sq * x_t + (1.0 - ab) * prior_.mu0) / (ab * prior_.s0_sq + 1.0 - ab);
  }

  ImageGrid<Scalar> estimate(const ImageGrid<Scalar>& in, int t, const NoiseSchedule& s) const override {
    const Index c = in.channels() / 2;
    const Affine a = coefficients(t, s);
    ImageGrid<Scalar> out(in.height(), in.width(), c, ValueDomain::unconstrained);
    out.array() = ((in.array().topRows(c).template cast<double>() - a.center) * a.slope).template cast<Scalar>();
    return out;
  }

 private:
  OracleGaussianPrior prior_;
};

}  // namespace regiondiff
