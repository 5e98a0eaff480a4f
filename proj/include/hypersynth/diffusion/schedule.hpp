#pragma once

// Noise schedule and the closed-form forward process.

#include <cmath>
#include <string>
#include <vector>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"

namespace hypersynth::diffusion {

// Index t runs 1..T; vectors are stored 0-based (entry t-1).
struct BetaSchedule {
  std::size_t T = 0;
  std::vector<double> betas;
  std::vector<double> alphas_cum;
  std::vector<double> sigmas;

  double beta(std::size_t t) const { return betas.at(t - 1); }
  double alpha(std::size_t t) const { return alphas_cum.at(t - 1); }
  double sigma(std::size_t t) const { return sigmas.at(t - 1); }

  void check_t(std::size_t t) const {
    if (t < 1 || t > T) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }
};

// Any betas in [0, 1); alphas_cum and sigmas derived.
inline BetaSchedule schedule_from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule: need at least one step");
  BetaSchedule s;
  s.T = betas.size();
  double acc = 1.0;
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("schedule: beta " + std::to_string(b) + " outside [0, 1)");
    acc *= 1.0 - b;
    s.alphas_cum.push_back(acc);
    s.sigmas.push_back(std::sqrt(b));
  }
  s.betas = std::move(betas);
  return s;
}

inline BetaSchedule make_linear_schedule(std::size_t T, double beta_start = 1e-4, double beta_end = 0.02) {
  if (T == 0) throw ConfigError("make_linear_schedule: T must be positive");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) && !(T == 1 && beta_start > 0.0 && beta_start < 1.0))
    throw ConfigError("make_linear_schedule: need 0 < beta_start < beta_end < 1");
  std::vector<double> b(T);
  for (std::size_t i = 0; i < T; ++i)
    b[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
  return schedule_from_betas(std::move(b));
}

// A_t = sqrt(alpha_t) A_0 + sqrt(1 - alpha_t) eps.
inline Patch forward_sample(const BetaSchedule& s, const Patch& a0, std::size_t t, const Patch& eps) {
  s.check_t(t);
  if (eps.height != a0.height || eps.width != a0.width || eps.channels != a0.channels || eps.data.size() != a0.data.size())
    throw ConfigError("forward_sample: noise shape differs from patch shape");
  const double ca = std::sqrt(s.alpha(t)), cn = std::sqrt(1.0 - s.alpha(t));
  Patch out = a0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<float>(ca * a0.data[i] + cn * eps.data[i]);
  return out;
}

// One step of the Markov chain: A_t = sqrt(1 - beta_t) A_{t-1} + sqrt(beta_t) eps.
inline double forward_step(const BetaSchedule& s, double prev, std::size_t t, double eps) {
  return std::sqrt(1.0 - s.beta(t)) * prev + std::sqrt(s.beta(t)) * eps;
}

}  // namespace hypersynth::diffusion
