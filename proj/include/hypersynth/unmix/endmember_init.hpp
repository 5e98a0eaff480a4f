#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"

namespace hypersynth::unmix {

struct GeometricInit {
  EndmemberMatrix endmembers;
  std::vector<std::size_t> pixel_indices;
};

// Automatic target generation: the first pick is the max-norm pixel, each
// following pick maximizes the residual norm after projecting out the span
// of the previous picks. Ties resolve to the lowest pixel index, so the
// result is a pure function of the cube.
inline GeometricInit geometric_endmember_init(const HyperCube& cube, std::size_t p) {
  if (p == 0) throw ConfigError("geometric_endmember_init: endmember count must be positive");
  if (p > cube.bands() || p > cube.pixels())
    throw ConfigError("geometric_endmember_init: p=" + std::to_string(p) + " exceeds bands or pixels");

  const Eigen::MatrixXd y = cube.matrix();
  const double scale = y.colwise().norm().maxCoeff();
  const double rank_tol = 1e-9 * std::max(scale, 1e-300);

  GeometricInit out;
  Eigen::MatrixXd basis(y.rows(), 0);  // orthonormal basis of the picks
  for (std::size_t k = 0; k < p; ++k) {
    double best = -1.0;
    Eigen::Index best_idx = -1;
    for (Eigen::Index s = 0; s < y.cols(); ++s) {
      if (cube.is_nodata(static_cast<std::size_t>(s))) continue;
      Eigen::VectorXd r = y.col(s);
      if (basis.cols() > 0) r -= basis * (basis.transpose() * r);
      const double n = r.norm();
      if (n > best) {
        best = n;
        best_idx = s;
      }
    }
    if (best_idx < 0 || best <= rank_tol)
      throw NumericalError("geometric_endmember_init: degenerate cube, achieved rank " + std::to_string(k) +
                           " < requested " + std::to_string(p));
    Eigen::VectorXd r = y.col(best_idx);
    if (basis.cols() > 0) r -= basis * (basis.transpose() * r);
    // Second Gram-Schmidt pass for numerical orthogonality.
    if (basis.cols() > 0) r -= basis * (basis.transpose() * r);
    basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
    basis.col(basis.cols() - 1) = r.normalized();
    out.pixel_indices.push_back(static_cast<std::size_t>(best_idx));
  }

  Eigen::MatrixXd e(y.rows(), static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < p; ++k) e.col(static_cast<Eigen::Index>(k)) = y.col(static_cast<Eigen::Index>(out.pixel_indices[k]));
  e = e.cwiseMax(0.0).cwiseMin(1.0);
  for (Eigen::Index j = 0; j < e.cols(); ++j)
    if (e.col(j).isZero(0.0)) e.col(j).setConstant(1e-6);
  out.endmembers = EndmemberMatrix(std::move(e));
  return out;
}

}  // namespace hypersynth::unmix
