#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"

namespace hypersynth::eval {

// Spectral angle between two spectra, in degrees.
inline double sad(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw ConfigError("sad: length mismatch");
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw ConfigError("sad: zero vector");
  const double c = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

inline double rmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ConfigError("rmse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

inline double rmse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.size() == 0) throw ConfigError("rmse: shape mismatch");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

// 10 log10(peak^2 / mse); +infinity for identical inputs.
inline double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double peak = 1.0) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.size() == 0) throw ConfigError("psnr: shape mismatch");
  const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// Single-channel SSIM with an 11x11 Gaussian window (sigma 1.5), k1 = 0.01,
// k2 = 0.03, averaged over all windows fully inside the image. Images
// smaller than the window use a window clipped to the image.
inline double ssim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double dynamic_range = 1.0) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.size() == 0) throw ConfigError("ssim: shape mismatch");
  const int win_r = static_cast<int>(std::min<Eigen::Index>(11, a.rows()));
  const int win_c = static_cast<int>(std::min<Eigen::Index>(11, a.cols()));
  auto kernel1d = [](int n) {
    std::vector<double> k(static_cast<std::size_t>(n));
    const double mid = (n - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      k[static_cast<std::size_t>(i)] = std::exp(-(i - mid) * (i - mid) / (2.0 * 1.5 * 1.5));
      total += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= total;
    return k;
  };
  const auto kr = kernel1d(win_r), kc = kernel1d(win_c);
  const double c1 = std::pow(0.01 * dynamic_range, 2), c2 = std::pow(0.03 * dynamic_range, 2);

  double total = 0.0;
  int windows = 0;
  for (Eigen::Index r0 = 0; r0 + win_r <= a.rows(); ++r0) {
    for (Eigen::Index c0 = 0; c0 + win_c <= a.cols(); ++c0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < win_r; ++i)
        for (int j = 0; j < win_c; ++j) {
          const double w = kr[static_cast<std::size_t>(i)] * kc[static_cast<std::size_t>(j)];
          const double x = a(r0 + i, c0 + j), y = b(r0 + i, c0 + j);
          ma += w * x;
          mb += w * y;
          saa += w * x * x;
          sbb += w * y * y;
          sab += w * x * y;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / windows;
}

}  // namespace hypersynth::eval
