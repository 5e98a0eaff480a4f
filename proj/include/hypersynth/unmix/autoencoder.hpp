#pragma once

// Autoencoder unmixer: per-pixel MLP encoder (tanh hidden layers, softmax
// head) emits abundances; the bias-free linear decoder's C x p weight matrix
// holds the endmembers. Trained on mean squared reconstruction error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/nn/optim.hpp"
#include "hypersynth/unmix/endmember_init.hpp"
#include "hypersynth/unmix/result.hpp"

namespace hypersynth::unmix {

struct AeConfig {
  std::size_t endmember_count = 3;
  std::vector<std::size_t> hidden_widths{32, 16};
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  // Weight of the simplex-volume surrogate sum_j ||e_j - mean(e)||^2 on the
  // decoder, added to the per-entry MSE. Zero gives the bare reconstruction loss.
  double volume_weight = 1e-5;
  std::uint64_t seed = 0;

  void validate() const {
    if (endmember_count < 2) throw ConfigError("AeConfig: endmember_count must be >= 2");
    if (!(learning_rate > 0.0)) throw ConfigError("AeConfig: learning_rate must be positive");
    if (volume_weight < 0.0) throw ConfigError("AeConfig: volume_weight must be non-negative");
    if (batch_size == 0) throw ConfigError("AeConfig: batch_size must be positive");
    for (auto w : hidden_widths)
      if (w == 0) throw ConfigError("AeConfig: hidden widths must be positive");
  }
};

class AeModel {
 public:
  using MatMap = Eigen::Map<Eigen::MatrixXd>;
  using CMatMap = Eigen::Map<const Eigen::MatrixXd>;
  using CVecMap = Eigen::Map<const Eigen::VectorXd>;

  AeModel(std::size_t bands, std::size_t p, const std::vector<std::size_t>& hidden) : bands_(bands), p_(p) {
    std::size_t in = bands;
    std::vector<std::size_t> widths = hidden;
    widths.push_back(p);
    for (std::size_t l = 0; l < widths.size(); ++l) {
      layout_.add("encoder/" + std::to_string(l) + "/weight", {widths[l], in});
      layout_.add("encoder/" + std::to_string(l) + "/bias", {widths[l]});
      in = widths[l];
    }
    layout_.add("decoder/weight", {bands, p});
    params_.assign(layout_.total(), 0.0);
    layers_ = widths.size();
  }

  std::size_t bands() const { return bands_; }
  std::size_t endmember_count() const { return p_; }
  std::size_t layers() const { return layers_; }
  const nn::ParamLayout& layout() const { return layout_; }
  nn::Buffer<double>& params() { return params_; }
  const nn::Buffer<double>& params() const { return params_; }

  CMatMap weight(std::size_t l) const { return cmat(layout_.specs()[2 * l]); }
  MatMap weight(std::size_t l) { return mat(layout_.specs()[2 * l]); }
  CVecMap bias(std::size_t l) const {
    const auto& s = layout_.specs()[2 * l + 1];
    return CVecMap(params_.data() + s.offset, static_cast<Eigen::Index>(s.size));
  }
  CMatMap decoder() const { return cmat(layout_.specs().back()); }
  MatMap decoder() { return mat(layout_.specs().back()); }

 private:
  MatMap mat(const nn::ParamSpec& s) {
    return MatMap(params_.data() + s.offset, static_cast<Eigen::Index>(s.shape[0]), static_cast<Eigen::Index>(s.shape[1]));
  }
  CMatMap cmat(const nn::ParamSpec& s) const {
    return CMatMap(params_.data() + s.offset, static_cast<Eigen::Index>(s.shape[0]), static_cast<Eigen::Index>(s.shape[1]));
  }

  std::size_t bands_, p_, layers_ = 0;
  nn::ParamLayout layout_;
  nn::Buffer<double> params_;
};

namespace detail {

inline Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd a(z.rows(), z.cols());
  for (Eigen::Index s = 0; s < z.cols(); ++s) {
    const Eigen::VectorXd e = (z.col(s).array() - z.col(s).maxCoeff()).exp();
    a.col(s) = e / e.sum();
  }
  return a;
}

// Activations per layer: acts[0] = input, acts[l+1] = output of layer l
// (tanh for hidden layers, softmax for the head).
inline std::vector<Eigen::MatrixXd> encoder_forward(const AeModel& m, const Eigen::MatrixXd& x) {
  std::vector<Eigen::MatrixXd> acts{x};
  for (std::size_t l = 0; l < m.layers(); ++l) {
    Eigen::MatrixXd z = (m.weight(l) * acts.back()).colwise() + m.bias(l);
    if (l + 1 < m.layers())
      acts.push_back(z.array().tanh().matrix());
    else
      acts.push_back(softmax_columns(z));
  }
  return acts;
}

}  // namespace detail

// Mean over all C x B entries of (x - D a)^2. When grad is non-null it
// receives the gradient with respect to model.params().
inline double ae_loss_and_grad(const AeModel& m, const Eigen::MatrixXd& x, nn::Buffer<double>* grad,
                               double volume_weight = 0.0) {
  const auto acts = detail::encoder_forward(m, x);
  const Eigen::MatrixXd& a = acts.back();
  const Eigen::MatrixXd r = m.decoder() * a - x;
  const double n = static_cast<double>(x.size());
  const Eigen::MatrixXd centered = m.decoder().colwise() - m.decoder().rowwise().mean();
  const double loss = r.squaredNorm() / n + volume_weight * centered.squaredNorm();
  if (!grad) return loss;

  grad->assign(m.params().size(), 0.0);
  const auto& specs = m.layout().specs();
  auto gmat = [&](const nn::ParamSpec& s) {
    return Eigen::Map<Eigen::MatrixXd>(grad->data() + s.offset, static_cast<Eigen::Index>(s.shape[0]),
                                       static_cast<Eigen::Index>(s.shape.size() > 1 ? s.shape[1] : 1));
  };
  const Eigen::MatrixXd dy = (2.0 / n) * r;
  gmat(specs.back()) = dy * a.transpose() + 2.0 * volume_weight * centered;
  const Eigen::MatrixXd da = m.decoder().transpose() * dy;
  // softmax backward: dz = a * (da - sum_k a_k da_k)
  Eigen::MatrixXd dz = a.array() * (da.rowwise() - (a.array() * da.array()).colwise().sum().matrix()).array();
  for (std::size_t l = m.layers(); l-- > 0;) {
    gmat(specs[2 * l]) = dz * acts[l].transpose();
    gmat(specs[2 * l + 1]) = dz.rowwise().sum();
    if (l == 0) break;
    const Eigen::MatrixXd dh = m.weight(l).transpose() * dz;
    dz = dh.array() * (1.0 - acts[l].array().square());
  }
  return loss;
}

inline AbundanceStack ae_encode(const AeModel& m, const HyperCube& cube) {
  if (cube.bands() != m.bands())
    throw ConfigError("ae_encode: cube has " + std::to_string(cube.bands()) + " bands, model expects " +
                      std::to_string(m.bands()));
  const Eigen::MatrixXd a = detail::encoder_forward(m, cube.matrix()).back();
  return AbundanceStack::from_matrix(a, cube.height(), cube.width(), true);
}

inline HyperCube ae_decode(const AeModel& m, const AbundanceStack& abundances) {
  if (abundances.channels() != m.endmember_count())
    throw ConfigError("ae_decode: abundance channels " + std::to_string(abundances.channels()) + " differ from p=" +
                      std::to_string(m.endmember_count()));
  return HyperCube::from_matrix(m.decoder() * abundances.matrix(), abundances.height(), abundances.width());
}

inline AeModel ae_init(const HyperCube& cube, const AeConfig& cfg) {
  AeModel m(cube.bands(), cfg.endmember_count, cfg.hidden_widths);
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t l = 0; l < m.layers(); ++l) {
    auto w = m.weight(l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  }
  m.decoder() = geometric_endmember_init(cube, cfg.endmember_count).endmembers.signatures();
  return m;
}

struct AeTrained {
  AeModel model;
  UnmixResult result;
};

inline AeTrained ae_train(const HyperCube& cube, const AeConfig& cfg) {
  cfg.validate();
  if (!cube.is_normalized()) throw ConfigError("ae_train: cube is not normalized to [0,1]");
  AeModel m = ae_init(cube, cfg);
  const Eigen::MatrixXd y = cube.matrix();
  const std::size_t s = cube.pixels();

  // Separate stream for shuffling so initialization and batching are independent.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  nn::AdamState<double> adam(m.params().size());
  const nn::AdamHyper hyper{cfg.learning_rate, 0.9, 0.999, 1e-8};
  nn::Buffer<double> grad;
  std::vector<double> trace;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < s; start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, s - start);
      Eigen::MatrixXd xb(y.rows(), static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) xb.col(static_cast<Eigen::Index>(i)) = y.col(static_cast<Eigen::Index>(order[start + i]));
      const double loss = ae_loss_and_grad(m, xb, &grad, cfg.volume_weight);
      if (!std::isfinite(loss)) throw NumericalError("ae_train: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(n);
      nn::adam_step<double>(m.params(), grad, adam, hyper, &m.layout());
      m.decoder() = m.decoder().cwiseMax(0.0).cwiseMin(1.0);
    }
    trace.push_back(epoch_loss / static_cast<double>(s));
  }

  Eigen::MatrixXd e = m.decoder();
  for (Eigen::Index j = 0; j < e.cols(); ++j)
    if (e.col(j).isZero(0.0)) e.col(j).setConstant(1e-6);
  UnmixResult res{EndmemberMatrix(std::move(e)), ae_encode(m, cube), std::move(trace), Method::DL};
  return {std::move(m), std::move(res)};
}

}  // namespace hypersynth::unmix
