#include "regiondiff/schedule.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace regiondiff {

namespace {

std::string shortest(double v) {
  // Fixed notation so small betas read 0.0001 rather than 1e-04; still the
  // shortest digits that round-trip.
  char buf[512];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  return std::string(buf, res.ptr);
}

}  // namespace

NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
    throw std::invalid_argument("beta bounds must satisfy 0 < beta_start <= beta_end < 1");
  }

  NoiseSchedule s;
  const Eigen::Index n = steps;
  s.betas_.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    // std::lerp is exact at both endpoints.
    const double f = n == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(n - 1);
    s.betas_[k] = std::lerp(beta_start, beta_end, f);
  }
  s.alphas_ = 1.0 - s.betas_.array();

  s.alpha_bars_.resize(n);
  s.posterior_variances_.resize(n);
  double running = 1.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double prev = running;
    running *= s.alphas_[k];
    s.alpha_bars_[k] = running;
    s.posterior_variances_[k] = (1.0 - prev) / (1.0 - running) * s.betas_[k];
  }
  return s;
}

std::string NoiseSchedule::to_csv() const {
  std::ostringstream os;
  os << "t,beta,alpha,alpha_bar,posterior_variance\n";
  for (int t = 1; t <= steps(); ++t) {
    os << t << ',' << shortest(beta(t)) << ',' << shortest(alpha(t)) << ','
       << shortest(alpha_bar(t)) << ',' << shortest(posterior_variance(t)) << '\n';
  }
  return os.str();
}

}  // namespace regiondiff
