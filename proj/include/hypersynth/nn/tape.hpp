#pragma once

// Minimal reverse-mode tape over feature maps stored as C x (H*W) row-major
// matrices (one contiguous plane per channel, the same layout as Patch).
// Vectors are C x 1. Parameters live in one flat buffer addressed by offset;
// parameter gradients accumulate into a caller-provided buffer of equal size.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"

namespace hypersynth::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
class Tape {
 public:
  struct Node {
    Mat<S> value;
    Mat<S> grad;  // empty until something flows into it
    std::size_t h = 0, w = 0;
    std::function<void(Tape&, std::size_t)> backward;
  };

  explicit Tape(std::span<const S> params) : params_(params) {}

  std::span<const S> params() const { return params_; }
  const S* param(std::size_t offset) const { return params_.data() + offset; }

  std::size_t push(Mat<S> value, std::size_t h, std::size_t w, std::function<void(Tape&, std::size_t)> bw = {}) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), h, w, std::move(bw)});
    return nodes_.size() - 1;
  }

  const Mat<S>& value(std::size_t id) const { return nodes_[id].value; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  const Mat<S>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  template <class Expr>
  void accumulate(std::size_t id, const Expr& g) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  S* param_grad(std::size_t offset) { return grad_out_.data() + offset; }

  // Propagates dout from node `out` back to every node and into grad_out
  // (accumulating; callers zero it first when they want a fresh gradient).
  void backward(std::size_t out, const Mat<S>& dout, std::span<S> grad_out) {
    if (grad_out.size() != params_.size()) throw ConfigError("Tape::backward: gradient buffer size mismatch");
    if (dout.rows() != nodes_[out].value.rows() || dout.cols() != nodes_[out].value.cols())
      throw ConfigError("Tape::backward: upstream gradient shape mismatch");
    grad_out_ = grad_out;
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[out].grad = dout;
    for (std::size_t i = out + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  // Optional record of attention probability matrices (for inspection).
  std::vector<Mat<S>>* attention_log = nullptr;

 private:
  std::span<const S> params_;
  std::span<S> grad_out_;
  std::vector<Node> nodes_;
};

}  // namespace hypersynth::nn
