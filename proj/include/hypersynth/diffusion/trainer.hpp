#pragma once

// Training state and the epsilon-prediction training step.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/core/parallel.hpp"
#include "hypersynth/core/random.hpp"
#include "hypersynth/diffusion/schedule.hpp"
#include "hypersynth/nn/optim.hpp"
#include "hypersynth/nn/unet.hpp"

namespace hypersynth::diffusion {

enum class LossKind { L1, L2 };

struct TrainConfig {
  nn::UNetConfig unet;
  std::size_t timesteps = 2000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double learning_rate = 1e-4;
  double ema_decay = 0.9999;
  std::size_t batch_size = 16;
  LossKind loss = LossKind::L1;
  std::uint64_t seed = 0;

  void validate() const {
    unet.validate();
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be positive");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("TrainConfig: ema_decay must lie in [0, 1]");
    if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"unet", nn::to_json(c.unet)},     {"timesteps", c.timesteps},   {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},           {"learning_rate", c.learning_rate}, {"ema_decay", c.ema_decay},
          {"batch_size", c.batch_size},       {"loss", c.loss == LossKind::L1 ? "l1" : "l2"}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("unet")) c.unet = nn::unet_config_from_json(j.at("unet"));
  c.timesteps = j.value("timesteps", c.timesteps);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  const std::string loss = j.value("loss", std::string("l1"));
  if (loss == "l1") c.loss = LossKind::L1;
  else if (loss == "l2") c.loss = LossKind::L2;
  else throw ConfigError("TrainConfig: loss must be \"l1\" or \"l2\", got \"" + loss + "\"");
  c.seed = j.value("seed", c.seed);
  c.unet.timesteps = c.timesteps;
  c.unet.seed = c.seed;
  c.validate();
  return c;
}

struct DenoiserParams {
  nn::Buffer<float> weights;
  nn::Buffer<float> ema;
  nn::AdamState<float> adam;
};

struct TrainState {
  TrainConfig config;
  nn::UNet net;
  DenoiserParams params;
  BetaSchedule schedule;
  std::uint64_t step = 0;
  std::vector<double> loss_history;
  std::mt19937_64 rng;

  std::string rng_state() const {
    std::ostringstream os;
    os << rng;
    return os.str();
  }
  void set_rng_state(const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw IoError("TrainState: malformed generator state");
  }
};

inline TrainState make_train_state(TrainConfig cfg) {
  cfg.unet.timesteps = cfg.timesteps;
  cfg.unet.seed = cfg.seed;
  cfg.validate();
  nn::UNet net(cfg.unet);
  auto w = net.init_params<float>();
  DenoiserParams p{w, w, nn::AdamState<float>(w.size())};
  auto sched = make_linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0));
  return TrainState{std::move(cfg), std::move(net), std::move(p), std::move(sched), 0, {}, rng};
}

inline nn::Mat<float> patch_matrix(const Patch& p) {
  return Eigen::Map<const nn::Mat<float>>(p.data.data(), static_cast<Eigen::Index>(p.channels),
                                          static_cast<Eigen::Index>(p.pixels()));
}

// One optimizer step on a batch of clean patches A_0. Per element, t and the
// noise field are drawn in batch order from the state generator; gradients
// are computed per element (in parallel) and summed in batch order.
inline double train_step(TrainState& st, std::span<const Patch> batch) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const auto& first = batch.front();
  for (const auto& p : batch)
    if (p.height != first.height || p.width != first.width || p.channels != first.channels)
      throw ConfigError("train_step: patches in a batch must share one shape");
  st.net.check_input(first.channels, first.height, first.width);

  const std::size_t b = batch.size();
  const std::size_t n_elem = first.channels * first.pixels();
  std::uniform_int_distribution<std::size_t> pick_t(1, st.schedule.T);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> ts(b);
  std::vector<nn::Mat<float>> eps(b);
  for (std::size_t i = 0; i < b; ++i) {
    ts[i] = pick_t(st.rng);
    eps[i].resize(static_cast<Eigen::Index>(first.channels), static_cast<Eigen::Index>(first.pixels()));
    for (Eigen::Index k = 0; k < eps[i].size(); ++k) eps[i].data()[k] = static_cast<float>(normal(st.rng));
  }

  const std::size_t np = st.net.param_count();
  std::vector<nn::Buffer<float>> grads(b);
  std::vector<double> losses(b, 0.0);
  const double norm = 1.0 / static_cast<double>(b * n_elem);
  const LossKind kind = st.config.loss;
  parallel_for(b, [&](std::size_t i) {
    const double ca = std::sqrt(st.schedule.alpha(ts[i])), cn = std::sqrt(1.0 - st.schedule.alpha(ts[i]));
    const nn::Mat<float> a0 = patch_matrix(batch[i]);
    const nn::Mat<float> noisy = (ca * a0.cast<double>() + cn * eps[i].cast<double>()).cast<float>();
    nn::Tape<float> tape(st.params.weights);
    const std::size_t out = st.net.forward(tape, noisy, first.height, first.width, ts[i]);
    const nn::Mat<float>& pred = tape.value(out);
    nn::Mat<float> dout(pred.rows(), pred.cols());
    double acc = 0.0;
    for (Eigen::Index k = 0; k < pred.size(); ++k) {
      const double d = static_cast<double>(pred.data()[k]) - eps[i].data()[k];
      if (kind == LossKind::L1) {
        acc += std::abs(d);
        dout.data()[k] = static_cast<float>(norm * static_cast<double>((d > 0) - (d < 0)));
      } else {
        acc += d * d;
        dout.data()[k] = static_cast<float>(2.0 * norm * d);
      }
    }
    losses[i] = acc;
    grads[i].assign(np, 0.0f);
    tape.backward(out, dout, grads[i]);
  });

  double loss = 0.0;
  for (double l : losses) loss += l;
  loss *= norm;
  if (!std::isfinite(loss)) throw NumericalError("train_step: non-finite loss at step " + std::to_string(st.step + 1));
  nn::Buffer<float> total(np, 0.0f);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < np; ++k) total[k] += grads[i][k];

  const nn::AdamHyper hyper{st.config.learning_rate, 0.9, 0.999, 1e-8};
  nn::adam_step<float>(st.params.weights, total, st.params.adam, hyper, &st.net.layout());
  nn::ema_update<float>(st.params.ema, st.params.weights, st.config.ema_decay);
  ++st.step;
  st.loss_history.push_back(loss);
  return loss;
}

}  // namespace hypersynth::diffusion
