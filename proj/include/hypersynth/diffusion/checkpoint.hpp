#pragma once

// TrainState <-> NTB. Per-parameter tensors are stored under weights/<name>,
// ema/<name>, adam/m/<name>, adam/v/<name>; plus adam/step, schedule/betas
// and loss_history. meta carries the config, step, generator state and the
// checksum of the training manifest.

#include <filesystem>
#include <string>

#include "hypersynth/core/error.hpp"
#include "hypersynth/diffusion/trainer.hpp"
#include "hypersynth/nn/ntb.hpp"

namespace hypersynth::diffusion {

namespace detail {

inline void put_params(nn::NtbFile& f, const std::string& prefix, const nn::ParamLayout& layout,
                       const nn::Buffer<float>& buf) {
  for (const auto& spec : layout.specs()) {
    nn::NtbTensor t{spec.shape, "f32le", {}};
    t.values.assign(buf.begin() + static_cast<std::ptrdiff_t>(spec.offset),
                    buf.begin() + static_cast<std::ptrdiff_t>(spec.offset + spec.size));
    f.tensors.emplace_back(prefix + spec.name, std::move(t));
  }
}

inline void get_params(const nn::NtbFile& f, const std::string& prefix, const nn::ParamLayout& layout,
                       nn::Buffer<float>& buf) {
  buf.assign(layout.total(), 0.0f);
  for (const auto& spec : layout.specs()) {
    const auto& t = f.get(prefix + spec.name);
    if (t.shape != spec.shape)
      throw ConfigError("checkpoint: tensor '" + prefix + spec.name + "' has a shape that does not match the configured network");
    for (std::size_t i = 0; i < spec.size; ++i) buf[spec.offset + i] = static_cast<float>(t.values[i]);
  }
}

}  // namespace detail

inline void save_checkpoint(const TrainState& st, const std::filesystem::path& path,
                            const std::string& manifest_checksum = "") {
  nn::NtbFile f;
  const auto& layout = st.net.layout();
  detail::put_params(f, "weights/", layout, st.params.weights);
  detail::put_params(f, "ema/", layout, st.params.ema);
  detail::put_params(f, "adam/m/", layout, st.params.adam.m);
  detail::put_params(f, "adam/v/", layout, st.params.adam.v);
  f.tensors.emplace_back("adam/step", nn::NtbTensor{{1}, "f64le", {static_cast<double>(st.params.adam.step)}});
  f.tensors.emplace_back("schedule/betas", nn::NtbTensor{{st.schedule.T}, "f64le", st.schedule.betas});
  f.tensors.emplace_back("loss_history", nn::NtbTensor{{st.loss_history.size()}, "f64le", st.loss_history});
  f.meta = {{"config", to_json(st.config)},
            {"step", st.step},
            {"rng", st.rng_state()},
            {"manifest_checksum", manifest_checksum}};
  nn::write_ntb(path, f);
}

struct LoadedCheckpoint {
  TrainState state;
  std::string manifest_checksum;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const nn::NtbFile f = nn::read_ntb(path);
  if (!f.meta.contains("config")) throw IoError("checkpoint '" + path.string() + "' has no embedded config");
  TrainState st = make_train_state(train_config_from_json(f.meta.at("config")));
  const auto& layout = st.net.layout();
  detail::get_params(f, "weights/", layout, st.params.weights);
  detail::get_params(f, "ema/", layout, st.params.ema);
  detail::get_params(f, "adam/m/", layout, st.params.adam.m);
  detail::get_params(f, "adam/v/", layout, st.params.adam.v);
  st.params.adam.step = static_cast<std::uint64_t>(f.get("adam/step").values.at(0));
  st.schedule = schedule_from_betas(f.get("schedule/betas").values);
  st.loss_history = f.get("loss_history").values;
  st.step = f.meta.value("step", std::uint64_t{0});
  st.set_rng_state(f.meta.at("rng").get<std::string>());
  return {std::move(st), f.meta.value("manifest_checksum", std::string())};
}

}  // namespace hypersynth::diffusion
