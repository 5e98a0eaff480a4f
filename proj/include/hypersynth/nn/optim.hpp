#pragma once

// Flat parameter buffers with a named layout, bias-corrected Adam and EMA.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hypersynth/core/error.hpp"

namespace hypersynth::nn {

// Flat buffers start at Eigen's maximum alignment, so a tensor at a given
// offset always has the same alignment and vectorized reductions over it
// round the same way from one allocation to the next.
template <class S>
using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

class ParamLayout {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    specs_.push_back(ParamSpec{std::move(name), std::move(shape), total_, n});
    total_ += n;
    return specs_.back().offset;
  }

  std::size_t total() const { return total_; }
  const std::vector<ParamSpec>& specs() const { return specs_; }

  const ParamSpec& find(const std::string& name) const {
    for (const auto& s : specs_)
      if (s.name == name) return s;
    throw ConfigError("no parameter tensor named '" + name + "'");
  }

  // Name of the tensor holding flat index i.
  std::string owner(std::size_t i) const {
    for (const auto& s : specs_)
      if (i >= s.offset && i < s.offset + s.size) return s.name;
    return "<out of range>";
  }

  bool operator==(const ParamLayout& o) const {
    if (specs_.size() != o.specs_.size()) return false;
    for (std::size_t i = 0; i < specs_.size(); ++i)
      if (specs_[i].name != o.specs_[i].name || specs_[i].shape != o.specs_[i].shape) return false;
    return true;
  }

 private:
  std::vector<ParamSpec> specs_;
  std::size_t total_ = 0;
};

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamState {
  Buffer<S> m;
  Buffer<S> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, S(0)), v(n, S(0)) {}
};

// Validates every gradient before touching anything, so a non-finite entry
// leaves parameters and moments unchanged.
template <class S>
void adam_step(std::span<S> params, std::span<const S> grads, AdamState<S>& st, const AdamHyper& h,
               const ParamLayout* layout = nullptr) {
  if (grads.size() != params.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw ConfigError("adam_step: gradient/state size differs from parameter size");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericalError("adam_step: non-finite gradient in tensor '" + (layout ? layout->owner(i) : std::string("params")) +
                           "' at flat index " + std::to_string(i));
  ++st.step;
  const double t = static_cast<double>(st.step);
  const S b1 = static_cast<S>(h.beta1), b2 = static_cast<S>(h.beta2);
  const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(h.beta1, t)));
  const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(h.beta2, t)));
  const S lr = static_cast<S>(h.lr), eps = static_cast<S>(h.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const S g = grads[i];
    st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (S(1) - b2) * g * g;
    params[i] -= lr * (st.m[i] * c1) / (std::sqrt(st.v[i] * c2) + eps);
  }
}

template <class S>
void ema_update(std::span<S> ema, std::span<const S> weights, double decay) {
  if (ema.size() != weights.size()) throw ConfigError("ema_update: shape mismatch");
  const S d = static_cast<S>(decay), r = static_cast<S>(1.0 - decay);
  for (std::size_t i = 0; i < ema.size(); ++i) ema[i] = d * ema[i] + r * weights[i];
}

}  // namespace hypersynth::nn
