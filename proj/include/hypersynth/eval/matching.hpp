#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/eval/metrics.hpp"

namespace hypersynth::eval {

// perm[j] is the estimated column assigned to truth column j.
struct Matching {
  std::vector<std::size_t> perm;
  std::vector<double> sad_deg;

  double total() const { return std::accumulate(sad_deg.begin(), sad_deg.end(), 0.0); }
  double max() const { return *std::max_element(sad_deg.begin(), sad_deg.end()); }
};

// cost(i, j) = SAD between truth column i and estimated column j.
inline Eigen::MatrixXd sad_cost(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
  Eigen::MatrixXd cost(truth.cols(), est.cols());
  for (Eigen::Index i = 0; i < truth.cols(); ++i)
    for (Eigen::Index j = 0; j < est.cols(); ++j) cost(i, j) = sad(truth.col(i), est.col(j));
  return cost;
}

inline std::vector<std::size_t> assign_exhaustive(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Hungarian algorithm (potentials form), O(n^3), square cost matrix.
inline std::vector<std::size_t> assign_hungarian(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
  return perm;
}

// Minimum-total-SAD pairing: exhaustive search up to p = 6, Hungarian above.
inline Matching match_endmembers(const EndmemberMatrix& est, const EndmemberMatrix& truth) {
  if (est.count() != truth.count()) throw ConfigError("match_endmembers: endmember count mismatch");
  if (est.bands() != truth.bands()) throw ConfigError("match_endmembers: band count mismatch");
  const Eigen::MatrixXd cost = sad_cost(est.signatures(), truth.signatures());
  Matching m;
  m.perm = est.count() <= 6 ? assign_exhaustive(cost) : assign_hungarian(cost);
  for (std::size_t j = 0; j < m.perm.size(); ++j)
    m.sad_deg.push_back(cost(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(m.perm[j])));
  return m;
}

// Reorders estimated abundance rows (p x S) into truth order.
inline Eigen::MatrixXd permute_abundances(const Eigen::MatrixXd& est, const std::vector<std::size_t>& perm) {
  Eigen::MatrixXd out(est.rows(), est.cols());
  for (std::size_t j = 0; j < perm.size(); ++j)
    out.row(static_cast<Eigen::Index>(j)) = est.row(static_cast<Eigen::Index>(perm[j]));
  return out;
}

}  // namespace hypersynth::eval
