#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"

namespace hypersynth::unmix {

// Euclidean projection onto the probability simplex {x >= 0, sum x = 1}
// (sort-and-threshold).
inline Eigen::VectorXd simplex_project(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  if (n == 0) return v;
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cumsum += u[static_cast<std::size_t>(i)];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

// Projects every column of a p x S matrix.
inline void simplex_project_columns(Eigen::MatrixXd& a) {
  for (Eigen::Index s = 0; s < a.cols(); ++s) a.col(s) = simplex_project(a.col(s));
}

// Precomputed Gram data for repeated FCLS solves against one endmember set.
class FclsSolver {
 public:
  explicit FclsSolver(const Eigen::MatrixXd& endmembers) : e_(endmembers), gram_(endmembers.transpose() * endmembers) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(e_);
    qr.setThreshold(1e-10);
    if (qr.rank() < e_.cols())
      throw NumericalError("fcls_solve: endmember matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                           " < " + std::to_string(e_.cols()) + ")");
  }

  // argmin ||y - E a||^2 s.t. a >= 0, sum a = 1, by a primal active-set
  // method started from the simplex barycenter.
  Eigen::VectorXd solve(const Eigen::VectorXd& y) const {
    const Eigen::Index p = e_.cols();
    const Eigen::VectorXd ety = e_.transpose() * y;
    Eigen::VectorXd a = Eigen::VectorXd::Constant(p, 1.0 / static_cast<double>(p));
    std::vector<bool> free(static_cast<std::size_t>(p), true);
    constexpr double kTol = 1e-12;

    for (int iter = 0; iter < 10 * static_cast<int>(p) + 20; ++iter) {
      const Eigen::VectorXd target = solve_free(ety, free);
      bool feasible = true;
      for (Eigen::Index i = 0; i < p; ++i)
        if (free[static_cast<std::size_t>(i)] && target(i) < -kTol) feasible = false;

      if (feasible) {
        a = target.cwiseMax(0.0);
        a /= a.sum();
        // Multipliers of the bound constraints for variables held at zero.
        const Eigen::VectorXd grad = gram_ * a - ety;
        double nu = 0.0;
        int nfree = 0;
        for (Eigen::Index i = 0; i < p; ++i)
          if (free[static_cast<std::size_t>(i)]) {
            nu -= grad(i);
            ++nfree;
          }
        nu /= nfree;
        Eigen::Index enter = -1;
        double most_negative = -1e-14 * (1.0 + ety.cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < p; ++i) {
          if (free[static_cast<std::size_t>(i)]) continue;
          const double mu = grad(i) + nu;
          if (mu < most_negative) {
            most_negative = mu;
            enter = i;
          }
        }
        if (enter < 0) return a;
        free[static_cast<std::size_t>(enter)] = true;
        continue;
      }

      // Move toward the unconstrained target until the first free variable
      // hits zero, then pin every variable that reached zero.
      double step = 1.0;
      for (Eigen::Index i = 0; i < p; ++i) {
        if (!free[static_cast<std::size_t>(i)] || target(i) >= -kTol) continue;
        const double denom = a(i) - target(i);
        if (denom > 0.0) step = std::min(step, a(i) / denom);
      }
      a += step * (target - a);
      for (Eigen::Index i = 0; i < p; ++i) {
        if (free[static_cast<std::size_t>(i)] && a(i) <= kTol) {
          free[static_cast<std::size_t>(i)] = false;
          a(i) = 0.0;
        }
      }
      a = a.cwiseMax(0.0);
      a /= a.sum();
    }
    return a;
  }

  const Eigen::MatrixXd& endmembers() const { return e_; }

 private:
  // Equality-constrained least squares over the free set; pinned entries
  // are zero.
  Eigen::VectorXd solve_free(const Eigen::VectorXd& ety, const std::vector<bool>& free) const {
    const Eigen::Index p = e_.cols();
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < p; ++i)
      if (free[static_cast<std::size_t>(i)]) idx.push_back(i);
    const auto m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
    Eigen::VectorXd rhs(m + 1);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index c = 0; c < m; ++c) kkt(r, c) = gram_(idx[r], idx[c]);
      kkt(r, m) = 1.0;
      kkt(m, r) = 1.0;
      rhs(r) = ety(idx[r]);
    }
    rhs(m) = 1.0;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p);
    for (Eigen::Index r = 0; r < m; ++r) out(idx[r]) = sol(r);
    return out;
  }

  Eigen::MatrixXd e_;
  Eigen::MatrixXd gram_;
};

// Fully constrained least squares for a single pixel.
inline Eigen::VectorXd fcls_solve(const Eigen::VectorXd& y, const Eigen::MatrixXd& endmembers) {
  if (y.size() != endmembers.rows()) throw ConfigError("fcls_solve: spectrum length differs from band count");
  return FclsSolver(endmembers).solve(y);
}

// KKT residual of a candidate FCLS solution: stationarity on the support,
// dual feasibility off it, and primal feasibility.
inline double fcls_kkt_residual(const Eigen::VectorXd& y, const Eigen::MatrixXd& endmembers, const Eigen::VectorXd& a) {
  const Eigen::VectorXd grad = endmembers.transpose() * (endmembers * a - y);
  double nu = 0.0;
  int support = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a(i) > 0.0) {
      nu -= grad(i);
      ++support;
    }
  nu = support ? nu / support : 0.0;
  double res = std::abs(a.sum() - 1.0);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    res = std::max(res, std::max(0.0, -a(i)));
    const double mu = grad(i) + nu;
    if (a(i) > 0.0)
      res = std::max(res, std::abs(mu));
    else
      res = std::max(res, std::max(0.0, -mu));
  }
  return res;
}

}  // namespace hypersynth::unmix
