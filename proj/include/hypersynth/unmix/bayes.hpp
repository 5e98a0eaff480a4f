#pragma once

// Bayesian unmixing: p(E, A | Y) with isotropic Gaussian likelihood,
// per-pixel Dirichlet(alpha) abundance prior and a uniform box prior on E.
// Metropolis-within-Gibbs: Dirichlet-proposal MH per pixel, then exact
// truncated-normal draws per endmember entry.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/core/parallel.hpp"
#include "hypersynth/core/random.hpp"
#include "hypersynth/unmix/endmember_init.hpp"
#include "hypersynth/unmix/result.hpp"
#include "hypersynth/unmix/simplex.hpp"

namespace hypersynth::unmix {

struct StConfig {
  std::size_t endmember_count = 3;
  // Likelihood deviation on the normalized cube; nullopt estimates it from
  // the residual of an FCLS fit on the initial endmembers.
  std::optional<double> noise_sigma = 0.01;
  double dirichlet_alpha = 1.0;
  std::size_t n_samples = 1500;
  std::size_t burn_in = 500;
  std::uint64_t seed = 0;
  // Overrides geometric initialization when set.
  std::optional<EndmemberMatrix> initial_endmembers;
  bool update_endmembers = true;
  // Re-checks every accepted move against the Metropolis-Hastings rule.
  bool debug_checks = false;

  void validate() const {
    if (endmember_count < 2) throw ConfigError("StConfig: endmember_count must be >= 2");
    if (!(dirichlet_alpha > 0.0)) throw ConfigError("StConfig: dirichlet_alpha must be positive");
    if (burn_in >= n_samples) throw ConfigError("StConfig: burn_in must be smaller than n_samples");
    if (noise_sigma && !(*noise_sigma > 0.0)) throw ConfigError("StConfig: noise_sigma must be positive");
  }
};

// ||Y - E A||_F^2 / (2 sigma^2) - sum_s sum_k (alpha - 1) log a_ks.
// Normalizing constants (Gaussian and Dirichlet) are dropped.
inline double neg_log_posterior(const Eigen::MatrixXd& y, const Eigen::MatrixXd& e, const Eigen::MatrixXd& a,
                                double sigma, double alpha) {
  if (y.rows() != e.rows() || e.cols() != a.rows() || y.cols() != a.cols())
    throw ConfigError("neg_log_posterior: shape mismatch");
  for (Eigen::Index s = 0; s < a.cols(); ++s)
    if (a.col(s).minCoeff() < -1e-9 || std::abs(a.col(s).sum() - 1.0) > 1e-6)
      throw ConfigError("neg_log_posterior: abundance column " + std::to_string(s) + " is off the simplex");
  if (e.minCoeff() < 0.0 || e.maxCoeff() > 1.0) throw ConfigError("neg_log_posterior: endmembers outside [0,1]");
  double v = (y - e * a).squaredNorm() / (2.0 * sigma * sigma);
  if (alpha != 1.0) v -= (alpha - 1.0) * a.array().max(std::numeric_limits<double>::min()).log().sum();
  return v;
}

inline double neg_log_posterior(const Eigen::MatrixXd& y, const Eigen::MatrixXd& e, const Eigen::MatrixXd& a,
                                const StConfig& cfg) {
  if (!cfg.noise_sigma) throw ConfigError("neg_log_posterior: noise_sigma must be numeric");
  return neg_log_posterior(y, e, a, *cfg.noise_sigma, cfg.dirichlet_alpha);
}

namespace detail {

inline double log_dirichlet_density(const Eigen::VectorXd& x, const Eigen::VectorXd& conc) {
  double v = std::lgamma(conc.sum());
  for (Eigen::Index k = 0; k < x.size(); ++k)
    v += (conc(k) - 1.0) * std::log(std::max(x(k), std::numeric_limits<double>::min())) - std::lgamma(conc(k));
  return v;
}

inline Eigen::VectorXd draw_dirichlet(const Eigen::VectorXd& conc, std::mt19937_64& rng) {
  Eigen::VectorXd g(conc.size());
  for (Eigen::Index k = 0; k < conc.size(); ++k) {
    std::gamma_distribution<double> gd(conc(k), 1.0);
    g(k) = gd(rng);
  }
  const double total = g.sum();
  if (!(total > 0.0)) return Eigen::VectorXd::Constant(conc.size(), 1.0 / static_cast<double>(conc.size()));
  return g / total;
}

// Upper-tail probability Q(x) = P(Z > x).
inline double normal_q(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// Draw from N(mu, sd^2) truncated to [lo, hi] by inverse CDF. The tail
// working side is chosen so the CDF differences keep their precision; far
// tails fall back to an exponential approximation.
inline double truncated_normal(double mu, double sd, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double a = (lo - mu) / sd, b = (hi - mu) / sd;
  bool flip = false;
  if (a + b < 0.0) {  // mass sits near the upper end: mirror so we work in the upper tail
    std::swap(a, b);
    a = -a;
    b = -b;
    flip = true;
  }
  double z;
  const double qa = normal_q(a), qb = normal_q(b);
  if (a < 35.0 && qa > 0.0 && qa - qb > 1e-300) {
    const double q = qa - u * (qa - qb);
    z = std::sqrt(2.0) * boost::math::erfc_inv(std::clamp(2.0 * q, 1e-300, 2.0 - 1e-16));
    z = std::clamp(z, a, b);
  } else {
    // Exponential tail with rate a on [a, b].
    const double span = b - a;
    z = a - std::log1p(-u * (1.0 - std::exp(-a * span))) / a;
    z = std::min(z, b);
  }
  if (flip) z = -z;
  return std::clamp(mu + sd * z, lo, hi);
}

}  // namespace detail

struct StSampleView {
  std::size_t iteration;  // index in the full chain
  const Eigen::MatrixXd& endmembers;
  const Eigen::MatrixXd& abundances;
  double neg_log_posterior;
};

struct StDiagnostics {
  double burn_in_acceptance = 0.0;
  double kept_acceptance = 0.0;
  double sigma = 0.0;
};

// Runs the chain; on_kept (optional) sees every post-burn-in sample.
inline UnmixResult gibbs_unmix(const HyperCube& cube, const StConfig& cfg,
                               const std::function<void(const StSampleView&)>& on_kept = {},
                               StDiagnostics* diagnostics = nullptr) {
  cfg.validate();
  if (!cube.is_normalized()) throw ConfigError("gibbs_unmix: cube is not normalized to [0,1]");
  const std::size_t p = cfg.endmember_count;
  if (cfg.initial_endmembers && (cfg.initial_endmembers->count() != p || cfg.initial_endmembers->bands() != cube.bands()))
    throw ConfigError("gibbs_unmix: initial endmembers do not match endmember_count and band count");

  const Eigen::MatrixXd y = cube.matrix();
  const auto s_count = static_cast<std::size_t>(y.cols());
  const auto pi = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd e = cfg.initial_endmembers ? cfg.initial_endmembers->signatures()
                                             : geometric_endmember_init(cube, p).endmembers.signatures();
  Eigen::MatrixXd a(pi, y.cols());
  {
    const FclsSolver solver(e);
    parallel_for(s_count, [&](std::size_t s) {
      a.col(static_cast<Eigen::Index>(s)) = solver.solve(y.col(static_cast<Eigen::Index>(s)));
    });
  }
  // Chain state must be strictly inside the simplex for the Dirichlet proposal densities.
  const double floor = 1e-6;
  for (Eigen::Index s = 0; s < a.cols(); ++s) {
    a.col(s) = a.col(s).cwiseMax(floor);
    a.col(s) /= a.col(s).sum();
  }

  double sigma;
  if (cfg.noise_sigma) {
    sigma = *cfg.noise_sigma;
  } else {
    sigma = std::sqrt((y - e * a).squaredNorm() / static_cast<double>(y.size()));
    sigma = std::max(sigma, 1e-4);
  }
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double alpha = cfg.dirichlet_alpha;

  std::vector<std::mt19937_64> pixel_rng;
  pixel_rng.reserve(s_count);
  for (std::size_t s = 0; s < s_count; ++s) pixel_rng.emplace_back(splitmix64(cfg.seed * 0x100000001b3ULL + s + 1));
  std::mt19937_64 e_rng(splitmix64(cfg.seed ^ 0xe17e17e17e17ULL));

  // Proposal concentration per pixel; larger is a smaller step.
  std::vector<double> kappa(s_count, 200.0);
  std::vector<std::uint32_t> accepted(s_count, 0), window_accepts(s_count, 0);
  std::vector<std::uint8_t> violation(s_count, 0);

  Eigen::MatrixXd e_sum = Eigen::MatrixXd::Zero(e.rows(), e.cols());
  Eigen::MatrixXd a_sum = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  std::vector<double> trace;
  std::size_t burn_accepts = 0, kept_accepts = 0;
  const std::size_t adapt_every = 25;

  for (std::size_t it = 0; it < cfg.n_samples; ++it) {
    std::fill(accepted.begin(), accepted.end(), 0u);
    // (i) abundances, conditionally independent per pixel given E.
    parallel_for(s_count, [&](std::size_t s) {
      const auto si = static_cast<Eigen::Index>(s);
      auto& rng = pixel_rng[s];
      const Eigen::VectorXd cur = a.col(si);
      const Eigen::VectorXd yc = y.col(si);
      const Eigen::VectorXd conc_fwd = kappa[s] * cur.array() + 1.0;
      const Eigen::VectorXd prop = detail::draw_dirichlet(conc_fwd, rng);
      if (prop.minCoeff() <= 0.0) return;
      const Eigen::VectorXd conc_back = kappa[s] * prop.array() + 1.0;
      auto energy = [&](const Eigen::VectorXd& v) {
        double u = (yc - e * v).squaredNorm() * inv2s2;
        if (alpha != 1.0) u -= (alpha - 1.0) * v.array().log().sum();
        return u;
      };
      const double du = energy(prop) - energy(cur);
      const double log_q = detail::log_dirichlet_density(cur, conc_back) - detail::log_dirichlet_density(prop, conc_fwd);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      const double u = unif(rng);
      if (std::log(u) < -du + log_q) {
        if (cfg.debug_checks && du - log_q > -std::log(u)) violation[s] = 1;
        a.col(si) = prop;
        accepted[s] = 1;
      }
    });
    if (cfg.debug_checks)
      for (std::size_t s = 0; s < s_count; ++s)
        if (violation[s]) throw NumericalError("gibbs_unmix: accept rule violated at pixel " + std::to_string(s));

    std::size_t sweep_accepts = 0;
    for (auto v : accepted) sweep_accepts += v;
    if (it < cfg.burn_in) {
      burn_accepts += sweep_accepts;
      for (std::size_t s = 0; s < s_count; ++s) window_accepts[s] += accepted[s];
      if ((it + 1) % adapt_every == 0) {
        for (std::size_t s = 0; s < s_count; ++s) {
          const double rate = window_accepts[s] / static_cast<double>(adapt_every);
          if (rate < 0.15) kappa[s] = std::min(kappa[s] * 2.0, 1e8);
          else if (rate > 0.45) kappa[s] = std::max(kappa[s] * 0.5, 2.0);
          window_accepts[s] = 0;
        }
      }
    } else {
      kept_accepts += sweep_accepts;
    }

    // (ii) endmember entries from their truncated Gaussian conditionals.
    if (cfg.update_endmembers) {
      Eigen::MatrixXd resid = y - e * a;  // kept in sync entry by entry
      const Eigen::VectorXd a_sq = a.rowwise().squaredNorm();
      for (Eigen::Index j = 0; j < pi; ++j) {
        if (a_sq(j) <= 0.0) continue;
        const double sd = sigma / std::sqrt(a_sq(j));
        for (Eigen::Index c = 0; c < e.rows(); ++c) {
          // r_c + e_cj a_j is the part of row c explained by entry (c, j) alone.
          const double proj = resid.row(c).dot(a.row(j));
          const double mu = e(c, j) + proj / a_sq(j);
          const double next = detail::truncated_normal(mu, sd, 0.0, 1.0, e_rng);
          resid.row(c) -= (next - e(c, j)) * a.row(j);
          e(c, j) = next;
        }
      }
    }

    if (it + 1 == cfg.burn_in && cfg.burn_in > 0) {
      const double rate = burn_accepts / static_cast<double>(cfg.burn_in * s_count);
      if (rate < 0.01)
        throw NumericalError("gibbs_unmix: chain is not mixing, burn-in acceptance rate " + std::to_string(rate));
    }
    if (it >= cfg.burn_in) {
      e_sum += e;
      a_sum += a;
      const double nlp = neg_log_posterior(y, e, a, sigma, alpha);
      trace.push_back(nlp);
      if (on_kept) on_kept(StSampleView{it, e, a, nlp});
    }
  }

  const double kept = static_cast<double>(cfg.n_samples - cfg.burn_in);
  if (diagnostics) {
    diagnostics->burn_in_acceptance = cfg.burn_in ? burn_accepts / static_cast<double>(cfg.burn_in * s_count) : 0.0;
    diagnostics->kept_acceptance = kept_accepts / (kept * static_cast<double>(s_count));
    diagnostics->sigma = sigma;
  }
  Eigen::MatrixXd e_mean = cfg.update_endmembers ? Eigen::MatrixXd((e_sum / kept).cwiseMax(0.0).cwiseMin(1.0)) : e;
  for (Eigen::Index j = 0; j < e_mean.cols(); ++j)
    if (e_mean.col(j).isZero(0.0)) e_mean.col(j).setConstant(1e-6);
  Eigen::MatrixXd a_mean = a_sum / kept;
  for (Eigen::Index s = 0; s < a_mean.cols(); ++s) a_mean.col(s) = simplex_project(a_mean.col(s));
  return UnmixResult{EndmemberMatrix(std::move(e_mean)), AbundanceStack::from_matrix(a_mean, cube.height(), cube.width(), true),
                     std::move(trace), Method::ST};
}

}  // namespace hypersynth::unmix
