#pragma once

// Ancestral sampling from A_T ~ N(0, I) down to A_0.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/core/parallel.hpp"
#include "hypersynth/core/random.hpp"
#include "hypersynth/diffusion/schedule.hpp"
#include "hypersynth/diffusion/trainer.hpp"
#include "hypersynth/nn/unet.hpp"
#include "hypersynth/unmix/simplex.hpp"

namespace hypersynth::diffusion {

struct SampleOptions {
  bool use_ema = true;
  // Leading coefficient 1/sqrt(alpha_t) (cumulative) instead of 1/sqrt(1 - beta_t).
  bool cumulative_coefficient = false;
  bool project = false;           // also return simplex-projected copies
  bool allow_untrained = false;   // permit sampling at step 0
  bool zero_noise = false;        // z = 0 at every step (deterministic path)
};

struct SampleResult {
  std::vector<Patch> raw;        // strict_simplex = false
  std::vector<Patch> projected;  // filled when SampleOptions::project
  std::size_t denoiser_calls = 0;
};

inline Patch project_patch(const Patch& p) {
  Patch out = p;
  Eigen::VectorXd v(static_cast<Eigen::Index>(p.channels));
  for (std::size_t i = 0; i < p.pixels(); ++i) {
    for (std::size_t k = 0; k < p.channels; ++k) v(static_cast<Eigen::Index>(k)) = p.data[k * p.pixels() + i];
    const Eigen::VectorXd q = unmix::simplex_project(v);
    for (std::size_t k = 0; k < p.channels; ++k) out.data[k * p.pixels() + i] = static_cast<float>(q(static_cast<Eigen::Index>(k)));
  }
  return out;
}

// Patch i uses its own generator derived from (seed, i), so output does not
// depend on the worker count.
inline SampleResult sample_with(const nn::UNet& net, std::span<const float> weights, const BetaSchedule& sched,
                                std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed,
                                const SampleOptions& opt = {}) {
  const std::size_t c = net.config().in_channels;
  net.check_input(c, h, w);
  if (weights.size() != net.param_count()) throw ConfigError("sample: weight buffer does not match the network");
  if (sched.T > net.config().timesteps) throw ConfigError("sample: schedule is longer than the network's timestep range");

  SampleResult res;
  res.raw.resize(n);
  std::atomic<std::size_t> calls{0};
  parallel_for(n, [&](std::size_t i) {
    std::mt19937_64 rng(derive_seed(seed, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd a(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(h * w));
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = normal(rng);
    for (std::size_t t = sched.T; t >= 1; --t) {
      const nn::Mat<float> x = a.cast<float>();
      const nn::Mat<float> eps_hat = net.predict<float>(weights, x, h, w, t);
      calls.fetch_add(1, std::memory_order_relaxed);
      const double beta = sched.beta(t), alpha = sched.alpha(t);
      const double lead = opt.cumulative_coefficient ? 1.0 / std::sqrt(alpha) : 1.0 / std::sqrt(1.0 - beta);
      const double eps_coef = beta / std::sqrt(1.0 - alpha);
      const Eigen::MatrixXd e = eps_hat.cast<double>();
      // Eigen matrices here are column-major; eps_hat is row-major C x HW.
      a = lead * (a - eps_coef * e);
      if (t > 1 && !opt.zero_noise) {
        const double s = sched.sigma(t);
        for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] += s * normal(rng);
      }
    }
    Patch p;
    p.height = h;
    p.width = w;
    p.channels = c;
    p.source_id = "sample/" + std::to_string(i);
    p.data.resize(c * h * w);
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t px = 0; px < h * w; ++px)
        p.data[k * h * w + px] = static_cast<float>(a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(px)));
    res.raw[i] = std::move(p);
  });
  res.denoiser_calls = calls.load();
  if (opt.project)
    for (const auto& p : res.raw) res.projected.push_back(project_patch(p));
  return res;
}

inline SampleResult sample(const TrainState& st, std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed,
                           const SampleOptions& opt = {}) {
  if (st.step == 0 && !opt.allow_untrained)
    throw ConfigError("sample: denoiser parameters are untrained (step 0); run training or load a checkpoint first");
  return sample_with(st.net, opt.use_ema ? st.params.ema : st.params.weights, st.schedule, n, h, w, seed, opt);
}

}  // namespace hypersynth::diffusion
