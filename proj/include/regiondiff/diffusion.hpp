#pragma once

// Closed-form forward marginal and reverse-posterior quantities. Coefficients
// come from the double-precision schedule and are rounded to Scalar once.

#include "regiondiff/image_grid.hpp"
#include "regiondiff/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace regiondiff {

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps for an explicit alpha_bar.
template <typename Scalar>
ImageGrid<Scalar> forward_marginal(const ImageGrid<Scalar>& x0, const ImageGrid<Scalar>& eps,
                                   double alpha_bar) {
  require_same_shape(x0, eps, "q_sample");
  const auto signal = static_cast<Scalar>(std::sqrt(alpha_bar));
  const auto spread = static_cast<Scalar>(std::sqrt(1.0 - alpha_bar));
  ImageGrid<Scalar> out(x0.height(), x0.width(), x0.channels(), ValueDomain::unconstrained);
  out.array() = signal * x0.array() + spread * eps.array();
  return out;
}

/// Draw from q(x_t | x_0) given the caller's standard-normal `eps`.
template <typename Scalar>
ImageGrid<Scalar> q_sample(const ImageGrid<Scalar>& x0, int t, const ImageGrid<Scalar>& eps,
                           const NoiseSchedule& s) {
  s.check_timestep(t);
  return forward_marginal(x0, eps, s.alpha_bar(t));
}

/// Mean of the reverse step: (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t).
template <typename Scalar>
ImageGrid<Scalar> posterior_mean(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& eps_hat, int t,
                                 const NoiseSchedule& s) {
  s.check_timestep(t);
  require_same_shape(x_t, eps_hat, "posterior_mean");
  const auto inv_sqrt_alpha = static_cast<Scalar>(1.0 / std::sqrt(s.alpha(t)));
  const auto eps_coef = static_cast<Scalar>(s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t)));
  ImageGrid<Scalar> out(x_t.height(), x_t.width(), x_t.channels(), ValueDomain::unconstrained);
  out.array() = inv_sqrt_alpha * (x_t.array() - eps_coef * eps_hat.array());
  return out;
}

/// (x_t - sqrt(1 - alpha_bar) * eps_hat) / sqrt(alpha_bar) for an explicit alpha_bar > 0.
template <typename Scalar>
ImageGrid<Scalar> invert_forward_marginal(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& eps_hat,
                                          double alpha_bar) {
  require_same_shape(x_t, eps_hat, "predict_x0_from_eps");
  if (!(alpha_bar > 0.0)) throw std::domain_error("predict_x0_from_eps: alpha_bar must be positive");
  const auto inv_signal = static_cast<Scalar>(1.0 / std::sqrt(alpha_bar));
  const auto spread = static_cast<Scalar>(std::sqrt(1.0 - alpha_bar));
  ImageGrid<Scalar> out(x_t.height(), x_t.width(), x_t.channels(), ValueDomain::unconstrained);
  out.array() = inv_signal * (x_t.array() - spread * eps_hat.array());
  return out;
}

/// Clean-image estimate implied by a noise estimate at timestep t.
template <typename Scalar>
ImageGrid<Scalar> predict_x0_from_eps(const ImageGrid<Scalar>& x_t, const ImageGrid<Scalar>& eps_hat,
                                      int t, const NoiseSchedule& s) {
  s.check_timestep(t);
  return invert_forward_marginal(x_t, eps_hat, s.alpha_bar(t));
}

}  // namespace regiondiff
