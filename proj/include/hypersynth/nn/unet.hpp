#pragma once

// Noise-prediction U-Net: conv stem, per-level residual block (+ optional
// attention) then strided-conv downsampling; bottleneck res-attn-res;
// decoder of nearest upsample + conv, skip concatenation, residual block
// (+ optional attention); GN-SiLU-conv head.

#include <algorithm>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/nn/layers.hpp"

namespace hypersynth::nn {

struct UNetConfig {
  std::size_t in_channels = 3;
  std::size_t base_width = 32;
  std::vector<std::size_t> level_widths{1, 2};  // multipliers of base_width
  std::size_t levels = 2;
  std::set<std::size_t> attn_levels{1};
  std::size_t heads = 2;
  std::size_t time_embed_dim = 64;
  std::size_t timesteps = 2000;  // valid t range for the time embedding
  std::uint64_t seed = 0;

  std::size_t width(std::size_t level) const { return base_width * level_widths.at(level); }

  void validate() const {
    if (in_channels == 0 || base_width == 0) throw ConfigError("UNetConfig: in_channels and base_width must be positive");
    if (levels == 0) throw ConfigError("UNetConfig: levels must be >= 1");
    if (level_widths.size() != levels)
      throw ConfigError("UNetConfig: level_widths has " + std::to_string(level_widths.size()) + " entries, expected " +
                        std::to_string(levels));
    for (auto m : level_widths)
      if (m == 0) throw ConfigError("UNetConfig: level width multipliers must be positive");
    for (auto l : attn_levels)
      if (l >= levels) throw ConfigError("UNetConfig: attention level " + std::to_string(l) + " >= levels");
    if (heads == 0) throw ConfigError("UNetConfig: heads must be positive");
    for (auto l : attn_levels)
      if (width(l) % heads != 0) throw ConfigError("UNetConfig: heads must divide the attention width at level " + std::to_string(l));
    if (width(levels - 1) % heads != 0) throw ConfigError("UNetConfig: heads must divide the bottleneck width");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw ConfigError("UNetConfig: time_embed_dim must be even");
    if (timesteps == 0) throw ConfigError("UNetConfig: timesteps must be positive");
  }
};

inline nlohmann::json to_json(const UNetConfig& c) {
  return {{"in_channels", c.in_channels}, {"base_width", c.base_width},   {"level_widths", c.level_widths},
          {"levels", c.levels},           {"attn_levels", c.attn_levels}, {"heads", c.heads},
          {"time_embed_dim", c.time_embed_dim}, {"timesteps", c.timesteps}, {"seed", c.seed}};
}

inline UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.base_width = j.value("base_width", c.base_width);
  c.level_widths = j.value("level_widths", c.level_widths);
  c.levels = j.value("levels", c.level_widths.size());
  c.attn_levels = j.value("attn_levels", c.attn_levels);
  c.heads = j.value("heads", c.heads);
  c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
  c.timesteps = j.value("timesteps", c.timesteps);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

class UNet {
 public:
  explicit UNet(UNetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t td = cfg_.time_embed_dim;
    temb1_ = Linear::make(reg_, "time/mlp1", td, td);
    temb2_ = Linear::make(reg_, "time/mlp2", td, td);
    conv_in_ = Conv2d::make(reg_, "conv_in", cfg_.in_channels, cfg_.base_width, 3);
    std::size_t prev = cfg_.base_width;
    for (std::size_t i = 0; i < cfg_.levels; ++i) {
      const std::string name = "down/" + std::to_string(i);
      const std::size_t ch = cfg_.width(i);
      Level lv;
      lv.res = ResBlock::make(reg_, name + "/res", prev, ch, td);
      if (cfg_.attn_levels.count(i)) lv.attn = AttentionBlock::make(reg_, name + "/attn", ch, cfg_.heads), lv.has_attn = true;
      lv.resample = Conv2d::make(reg_, name + "/downsample", ch, ch, 3, 2);
      down_.push_back(lv);
      prev = ch;
    }
    mid_res1_ = ResBlock::make(reg_, "mid/res1", prev, prev, td);
    mid_attn_ = AttentionBlock::make(reg_, "mid/attn", prev, cfg_.heads);
    mid_res2_ = ResBlock::make(reg_, "mid/res2", prev, prev, td);
    up_.resize(cfg_.levels);
    for (std::size_t i = cfg_.levels; i-- > 0;) {
      const std::string name = "up/" + std::to_string(i);
      const std::size_t ch = cfg_.width(i);
      Level lv;
      lv.resample = Conv2d::make(reg_, name + "/upsample", prev, prev, 3);
      lv.res = ResBlock::make(reg_, name + "/res", prev + ch, ch, td);
      if (cfg_.attn_levels.count(i)) lv.attn = AttentionBlock::make(reg_, name + "/attn", ch, cfg_.heads), lv.has_attn = true;
      up_[i] = lv;
      prev = ch;
    }
    out_norm_ = GroupNorm::make(reg_, "out/norm", prev);
    // Small output init keeps initial predictions near zero without
    // severing the dependence on t.
    out_conv_ = Conv2d::make(reg_, "out/conv", prev, cfg_.in_channels, 3, 1, 0.1);
  }

  const UNetConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return reg_.layout; }
  std::size_t param_count() const { return reg_.layout.total(); }

  template <class S>
  Buffer<S> init_params() const {
    return reg_.init_params<S>(cfg_.seed);
  }

  void check_input(std::size_t channels, std::size_t h, std::size_t w) const {
    const std::size_t div = std::size_t{1} << cfg_.levels;
    if (channels != cfg_.in_channels)
      throw ConfigError("unet: input has " + std::to_string(channels) + " channels, expected " + std::to_string(cfg_.in_channels));
    if (h == 0 || w == 0 || h % div != 0 || w % div != 0)
      throw ConfigError("unet: spatial size " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by " +
                        std::to_string(div));
  }

  // Records the forward pass on tape (whose params span must match the
  // layout) and returns the output node.
  template <class S>
  std::size_t forward(Tape<S>& tape, const Mat<S>& x, std::size_t h, std::size_t w, std::size_t t) const {
    if (tape.params().size() != param_count()) throw ConfigError("unet: parameter buffer size mismatch");
    check_input(static_cast<std::size_t>(x.rows()), h, w);
    if (static_cast<std::size_t>(x.cols()) != h * w) throw ConfigError("unet: input column count differs from h*w");

    const auto te = time_embed(t, cfg_.time_embed_dim, cfg_.timesteps);
    Mat<S> tv(static_cast<Eigen::Index>(te.size()), 1);
    for (std::size_t i = 0; i < te.size(); ++i) tv(static_cast<Eigen::Index>(i), 0) = static_cast<S>(te[i]);
    const std::size_t temb_in = input(tape, std::move(tv), 1, 1);
    const std::size_t temb = silu(tape, linear(tape, temb2_, silu(tape, linear(tape, temb1_, temb_in))));

    std::size_t hnode = conv2d(tape, conv_in_, input(tape, Mat<S>(x), h, w));
    std::vector<std::size_t> skips;
    for (const auto& lv : down_) {
      hnode = res_block(tape, lv.res, hnode, temb);
      if (lv.has_attn) hnode = attention_block(tape, lv.attn, hnode);
      skips.push_back(hnode);
      hnode = conv2d(tape, lv.resample, hnode);
    }
    hnode = res_block(tape, mid_res1_, hnode, temb);
    hnode = attention_block(tape, mid_attn_, hnode);
    hnode = res_block(tape, mid_res2_, hnode, temb);
    for (std::size_t i = cfg_.levels; i-- > 0;) {
      const auto& lv = up_[i];
      hnode = conv2d(tape, lv.resample, upsample2(tape, hnode));
      hnode = concat_channels(tape, hnode, skips[i]);
      hnode = res_block(tape, lv.res, hnode, temb);
      if (lv.has_attn) hnode = attention_block(tape, lv.attn, hnode);
    }
    return conv2d(tape, out_conv_, silu(tape, group_norm(tape, out_norm_, hnode)));
  }

  template <class S>
  Mat<S> predict(std::span<const S> params, const Mat<S>& x, std::size_t h, std::size_t w, std::size_t t) const {
    Tape<S> tape(params);
    return tape.value(forward(tape, x, h, w, t));
  }

 private:
  struct Level {
    ResBlock res;
    bool has_attn = false;
    AttentionBlock attn;
    Conv2d resample;
  };

  UNetConfig cfg_;
  Registry reg_;
  Linear temb1_, temb2_;
  Conv2d conv_in_, out_conv_;
  std::vector<Level> down_, up_;
  ResBlock mid_res1_, mid_res2_;
  AttentionBlock mid_attn_;
  GroupNorm out_norm_;
};

}  // namespace hypersynth::nn
