#pragma once

// Ground-truth scenes Y = E A + N with known endmembers, abundances and noise.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/eval/metrics.hpp"

namespace hypersynth::eval {

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t p = 3;
  std::size_t bands = 48;
  double smoothness = 4.0;       // Gaussian sigma of the abundance logit fields, pixels
  double dirichlet_alpha = 0.3;  // smaller is sharper (closer to pure pixels)
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  double min_pairwise_sad_deg = 10.0;

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("SceneSpec: empty image");
    if (p < 1 || p > bands) throw ConfigError("SceneSpec: need 1 <= p <= bands");
    if (!(snr_db > 0.0)) throw ConfigError("SceneSpec: snr_db must be positive or infinite");
    if (!(dirichlet_alpha > 0.0)) throw ConfigError("SceneSpec: dirichlet_alpha must be positive");
    if (smoothness < 0.0) throw ConfigError("SceneSpec: smoothness must be non-negative");
  }
};

struct Scene {
  HyperCube cube;
  EndmemberMatrix endmembers;
  AbundanceStack abundances;
};

namespace detail {

inline Eigen::MatrixXd random_spectra(std::size_t bands, std::size_t p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(-3.0, 3.0), unit(0.0, 1.0), offset(-1.0, 1.0);
  Eigen::MatrixXd e(static_cast<Eigen::Index>(bands), static_cast<Eigen::Index>(p));
  const double nb = static_cast<double>(bands);
  for (std::size_t j = 0; j < p; ++j) {
    const double base = offset(rng);
    double a[4], mu[4], w[4];
    for (int k = 0; k < 4; ++k) {
      a[k] = amp(rng);
      mu[k] = unit(rng) * nb;
      w[k] = nb / 10.0 + unit(rng) * (nb / 4.0 - nb / 10.0);
    }
    for (std::size_t c = 0; c < bands; ++c) {
      double g = base;
      for (int k = 0; k < 4; ++k) g += a[k] * std::exp(-std::pow(static_cast<double>(c) - mu[k], 2) / (2 * w[k] * w[k]));
      e(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = 0.05 + 0.9 / (1.0 + std::exp(-g));
    }
  }
  return e;
}

// Separable Gaussian blur with clamped borders.
inline std::vector<double> gaussian_blur(const std::vector<double>& field, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0.0) return field;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= total;
  auto clampi = [](long v, long hi) { return static_cast<std::size_t>(std::clamp<long>(v, 0, hi - 1)); };
  std::vector<double> tmp(field.size()), out(field.size());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<std::size_t>(i + radius)] * field[r * w + clampi(static_cast<long>(c) + i, static_cast<long>(w))];
      tmp[r * w + c] = acc;
    }
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<std::size_t>(i + radius)] * tmp[clampi(static_cast<long>(r) + i, static_cast<long>(h)) * w + c];
      out[r * w + c] = acc;
    }
  return out;
}

}  // namespace detail

inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  Eigen::MatrixXd e;
  bool ok = false;
  for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
    e = detail::random_spectra(spec.bands, spec.p, rng);
    ok = true;
    for (Eigen::Index i = 0; i < e.cols() && ok; ++i)
      for (Eigen::Index j = i + 1; j < e.cols() && ok; ++j)
        if (sad(e.col(i), e.col(j)) <= spec.min_pairwise_sad_deg) ok = false;
  }
  if (!ok) throw ConfigError("generate_scene: no endmember set with pairwise SAD above threshold after 1000 tries");

  const std::size_t s = spec.height * spec.width;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd logits(static_cast<Eigen::Index>(spec.p), static_cast<Eigen::Index>(s));
  for (std::size_t k = 0; k < spec.p; ++k) {
    std::vector<double> field(s);
    for (auto& v : field) v = normal(rng);
    field = detail::gaussian_blur(field, spec.height, spec.width, spec.smoothness);
    double mean = 0.0, var = 0.0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(s);
    for (double v : field) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(s));
    for (std::size_t px = 0; px < s; ++px)
      logits(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(px)) =
          (field[px] - mean) / (sd > 0 ? sd : 1.0) / spec.dirichlet_alpha;
  }
  Eigen::MatrixXd a(logits.rows(), logits.cols());
  for (Eigen::Index px = 0; px < logits.cols(); ++px) {
    const Eigen::VectorXd z = (logits.col(px).array() - logits.col(px).maxCoeff()).exp();
    a.col(px) = z / z.sum();
  }
  AbundanceStack abund = AbundanceStack::from_matrix(a, spec.height, spec.width, true);

  // Mix with the float-rounded abundances so E A reproduces the stored data.
  Eigen::MatrixXd y = e * abund.matrix();
  if (std::isfinite(spec.snr_db)) {
    const double signal_power = y.squaredNorm() / static_cast<double>(y.size());
    const double noise_sd = std::sqrt(signal_power / std::pow(10.0, spec.snr_db / 10.0));
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] += noise_sd * normal(rng);
  }
  return Scene{HyperCube::from_matrix(y, spec.height, spec.width), EndmemberMatrix(std::move(e)), std::move(abund)};
}

}  // namespace hypersynth::eval
