#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance run. Nothing here calls into the library's numerics.

#include "regiondiff/image_grid.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <vector>

namespace oracles {

using Big = boost::multiprecision::cpp_bin_float_50;

/// 50-digit cumulative products of (1 - beta_k) for the linear schedule.
inline std::vector<Big> big_alpha_bars(int T, double beta_start, double beta_end) {
  std::vector<Big> out;
  Big prod = 1;
  for (int k = 0; k < T; ++k) {
    Big beta = Big(beta_start);
    if (T > 1) beta += (Big(beta_end) - Big(beta_start)) * k / (T - 1);
    prod *= 1 - beta;
    out.push_back(prod);
  }
  return out;
}

/// Direct 2-D windowed SSIM: full 11x11 Gaussian kernel, two-pass moments,
/// "valid" positions, dynamic range 1.
inline double ssim(const regiondiff::ImageGrid<double>& a, const regiondiff::ImageGrid<double>& b) {
  const int k = 11;
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double kernel[11][11];
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      kernel[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * sigma * sigma));
      total += kernel[i][j];
    }
  }
  double sum = 0.0;
  int count = 0;
  for (regiondiff::Index r = 0; r + k <= a.height(); ++r) {
    for (regiondiff::Index c = 0; c + k <= a.width(); ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          mx += kernel[i][j] / total * a(r + i, c + j);
          my += kernel[i][j] / total * b(r + i, c + j);
        }
      }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const double w = kernel[i][j] / total;
          const double dx = a(r + i, c + j) - mx, dy = b(r + i, c + j) - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          cxy += w * dx * dy;
        }
      }
      sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return sum / count;
}

/// mu~(x_t, x0) written directly from the two-Gaussian posterior, with the
/// schedule given as plain beta / alpha_bar values.
inline double posterior_blend(double x_t, double x0, double beta, double ab, double ab_prev) {
  return std::sqrt(ab_prev) * beta / (1.0 - ab) * x0 + std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab) * x_t;
}

}  // namespace oracles
