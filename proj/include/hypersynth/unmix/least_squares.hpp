#pragma once

// Regularized blind unmixing by alternating projected gradient:
//   min 1/2 ||Y - E A||_F^2 + xi * TV(A) + gamma * sum_j ||e_j - mean(e)||^2
//   s.t. every column of A on the simplex, 0 <= E <= 1.
// TV is the anisotropic total variation of each abundance channel.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/core/parallel.hpp"
#include "hypersynth/unmix/endmember_init.hpp"
#include "hypersynth/unmix/result.hpp"
#include "hypersynth/unmix/simplex.hpp"

namespace hypersynth::unmix {

enum class AbundanceInit { Fcls, Uniform };

struct LsConfig {
  std::size_t endmember_count = 3;
  double xi = 1e-3;
  double gamma = 1.0;
  std::size_t max_outer_iters = 100;
  std::size_t inner_iters = 10;
  double tol = 1e-6;
  // Overrides geometric initialization when set.
  std::optional<EndmemberMatrix> initial_endmembers;
  bool update_endmembers = true;
  AbundanceInit abundance_init = AbundanceInit::Fcls;

  void validate() const {
    if (endmember_count < 2) throw ConfigError("LsConfig: endmember_count must be >= 2");
    if (xi < 0.0 || gamma < 0.0) throw ConfigError("LsConfig: xi and gamma must be non-negative");
    if (!(tol > 0.0)) throw ConfigError("LsConfig: tol must be positive");
  }
};

namespace detail {

class LsProblem {
 public:
  LsProblem(const Eigen::MatrixXd& y, std::size_t height, std::size_t width, double xi, double gamma)
      : y_(y), h_(height), w_(width), xi_(xi), gamma_(gamma) {}

  double total_variation(const Eigen::MatrixXd& a) const {
    double tv = 0.0;
    for (Eigen::Index k = 0; k < a.rows(); ++k)
      for (std::size_t r = 0; r < h_; ++r)
        for (std::size_t c = 0; c < w_; ++c) {
          const double v = a(k, idx(r, c));
          if (c + 1 < w_) tv += std::abs(a(k, idx(r, c + 1)) - v);
          if (r + 1 < h_) tv += std::abs(a(k, idx(r + 1, c)) - v);
        }
    return tv;
  }

  Eigen::MatrixXd tv_subgradient(const Eigen::MatrixXd& a) const {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    auto sgn = [](double d) { return static_cast<double>((d > 0.0) - (d < 0.0)); };
    for (Eigen::Index k = 0; k < a.rows(); ++k)
      for (std::size_t r = 0; r < h_; ++r)
        for (std::size_t c = 0; c < w_; ++c) {
          const Eigen::Index here = idx(r, c);
          if (c + 1 < w_) {
            const double s = sgn(a(k, idx(r, c + 1)) - a(k, here));
            g(k, idx(r, c + 1)) += s;
            g(k, here) -= s;
          }
          if (r + 1 < h_) {
            const double s = sgn(a(k, idx(r + 1, c)) - a(k, here));
            g(k, idx(r + 1, c)) += s;
            g(k, here) -= s;
          }
        }
    return g;
  }

  static double volume_penalty(const Eigen::MatrixXd& e) {
    const Eigen::VectorXd mean = e.rowwise().mean();
    return (e.colwise() - mean).squaredNorm();
  }

  double objective(const Eigen::MatrixXd& e, const Eigen::MatrixXd& a) const {
    double f = 0.5 * (y_ - e * a).squaredNorm();
    if (xi_ > 0.0) f += xi_ * total_variation(a);
    if (gamma_ > 0.0) f += gamma_ * volume_penalty(e);
    return f;
  }

  // One projected-gradient step on A with step halving; returns false when
  // no step size gives sufficient decrease (A is then left unchanged).
  bool abundance_step(const Eigen::MatrixXd& e, Eigen::MatrixXd& a, double& f, double& eta) const {
    Eigen::MatrixXd grad = e.transpose() * (e * a - y_);
    if (xi_ > 0.0) grad += xi_ * tv_subgradient(a);
    for (int halving = 0; halving < 40; ++halving, eta *= 0.5) {
      Eigen::MatrixXd trial = a - eta * grad;
      parallel_for(static_cast<std::size_t>(trial.cols()), [&](std::size_t s) {
        trial.col(static_cast<Eigen::Index>(s)) = simplex_project(trial.col(static_cast<Eigen::Index>(s)));
      });
      const double ft = objective(e, trial);
      const double moved = (trial - a).squaredNorm();
      if (moved == 0.0) return false;
      if (ft <= f - 1e-4 * moved / eta) {
        a = std::move(trial);
        f = ft;
        eta *= 2.0;
        return true;
      }
    }
    return false;
  }

  bool endmember_step(Eigen::MatrixXd& e, const Eigen::MatrixXd& a, double& f, double& eta) const {
    Eigen::MatrixXd grad = (e * a - y_) * a.transpose();
    if (gamma_ > 0.0) grad += 2.0 * gamma_ * (e.colwise() - e.rowwise().mean());
    for (int halving = 0; halving < 40; ++halving, eta *= 0.5) {
      Eigen::MatrixXd trial = (e - eta * grad).cwiseMax(0.0).cwiseMin(1.0);
      const double ft = objective(trial, a);
      const double moved = (trial - e).squaredNorm();
      if (moved == 0.0) return false;
      if (ft <= f - 1e-4 * moved / eta) {
        e = std::move(trial);
        f = ft;
        eta *= 2.0;
        return true;
      }
    }
    return false;
  }

 private:
  Eigen::Index idx(std::size_t r, std::size_t c) const { return static_cast<Eigen::Index>(r * w_ + c); }

  const Eigen::MatrixXd& y_;
  std::size_t h_, w_;
  double xi_, gamma_;
};

inline double spectral_norm_sq(const Eigen::MatrixXd& m) {
  // Largest eigenvalue of the Gram matrix m^T m (small square matrices here).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m, Eigen::EigenvaluesOnly);
  return std::max(es.eigenvalues().maxCoeff(), 1e-12);
}

}  // namespace detail

inline UnmixResult alternating_minimize(const HyperCube& cube, const LsConfig& cfg) {
  cfg.validate();
  if (!cube.is_normalized()) throw ConfigError("alternating_minimize: cube is not normalized to [0,1]");
  const std::size_t p = cfg.endmember_count;
  if (cfg.initial_endmembers && cfg.initial_endmembers->count() != p)
    throw ConfigError("alternating_minimize: initial endmember count differs from endmember_count");
  if (cfg.initial_endmembers && cfg.initial_endmembers->bands() != cube.bands())
    throw ConfigError("alternating_minimize: initial endmember band count differs from cube");

  const Eigen::MatrixXd y = cube.matrix();
  Eigen::MatrixXd e = cfg.initial_endmembers ? cfg.initial_endmembers->signatures()
                                             : geometric_endmember_init(cube, p).endmembers.signatures();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(p), y.cols());
  if (cfg.abundance_init == AbundanceInit::Uniform) {
    a.setConstant(1.0 / static_cast<double>(p));
  } else {
    const FclsSolver solver(e);
    parallel_for(static_cast<std::size_t>(y.cols()), [&](std::size_t s) {
      a.col(static_cast<Eigen::Index>(s)) = solver.solve(y.col(static_cast<Eigen::Index>(s)));
    });
  }

  const detail::LsProblem problem(y, cube.height(), cube.width(), cfg.xi, cfg.gamma);
  double f = problem.objective(e, a);
  const double f0 = f;
  std::vector<double> trace{f};

  double eta_a = 1.0 / detail::spectral_norm_sq(e);
  double eta_e = 1.0;
  for (std::size_t outer = 0; outer < cfg.max_outer_iters; ++outer) {
    const double f_prev = f;
    for (std::size_t i = 0; i < cfg.inner_iters; ++i)
      if (!problem.abundance_step(e, a, f, eta_a)) break;
    if (cfg.update_endmembers) {
      eta_e = 1.0 / (detail::spectral_norm_sq(a.transpose()) + 2.0 * cfg.gamma);
      for (std::size_t i = 0; i < cfg.inner_iters; ++i)
        if (!problem.endmember_step(e, a, f, eta_e)) break;
      eta_a = std::max(eta_a, 1.0 / detail::spectral_norm_sq(e));
    }
    trace.push_back(f);
    if (!std::isfinite(f) || f > 10.0 * f0)
      throw NumericalError("alternating_minimize: diverged at outer iteration " + std::to_string(outer) +
                           " (objective " + std::to_string(f) + ", initial " + std::to_string(f0) + ")");
    if ((f_prev - f) < cfg.tol * std::abs(f_prev)) break;
  }

  for (Eigen::Index j = 0; j < e.cols(); ++j)
    if (e.col(j).isZero(0.0)) e.col(j).setConstant(1e-6);
  return UnmixResult{EndmemberMatrix(std::move(e)), AbundanceStack::from_matrix(a, cube.height(), cube.width(), true),
                     std::move(trace), Method::LS};
}

}  // namespace hypersynth::unmix
