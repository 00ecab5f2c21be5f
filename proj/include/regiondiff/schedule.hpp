#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace regiondiff {

/// Precomputed diffusion tables in double precision. Every accessor takes a
/// 1-based timestep t in [1, T]; alpha_bar(0) is defined as 1.
class NoiseSchedule {
 public:
  int steps() const { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_[index(t)];
  }
  double posterior_variance(int t) const { return posterior_variances_[index(t)]; }

  // 0-based tables, entry k belongs to timestep k + 1.
  const Eigen::VectorXd& betas() const { return betas_; }
  const Eigen::VectorXd& alphas() const { return alphas_; }
  const Eigen::VectorXd& alpha_bars() const { return alpha_bars_; }
  const Eigen::VectorXd& posterior_variances() const { return posterior_variances_; }

  void check_timestep(int t) const {
    if (t < 1 || t > steps()) {
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                              std::to_string(steps()) + "]");
    }
  }

  /// Header `t,beta,alpha,alpha_bar,posterior_variance`, one row per timestep.
  std::string to_csv() const;

 private:
  friend NoiseSchedule build_linear_schedule(int, double, double);
  NoiseSchedule() = default;

  Eigen::Index index(int t) const {
    check_timestep(t);
    return t - 1;
  }

  Eigen::VectorXd betas_;
  Eigen::VectorXd alphas_;
  Eigen::VectorXd alpha_bars_;
  Eigen::VectorXd posterior_variances_;
};

/// betas linearly spaced from beta_start to beta_end inclusive.
/// Throws std::invalid_argument for T < 1 or bounds outside 0 < start <= end < 1.
NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end);

}  // namespace regiondiff
