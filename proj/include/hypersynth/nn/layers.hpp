#pragma once

// Differentiable layers recorded on a Tape. Each layer descriptor holds the
// offsets of its tensors in the flat parameter buffer; registration with a
// ParamLayout fixes the naming and ordering.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "hypersynth/core/error.hpp"
#include "hypersynth/nn/optim.hpp"
#include "hypersynth/nn/tape.hpp"

namespace hypersynth::nn {

// Sinusoidal embedding of timestep t in [1, T]: the first half of the
// entries are sin(pos * w_k), the second half cos(pos * w_k), with
// pos = t - 1 and w_k geometric from 1 down to 1/10000.
inline std::vector<double> time_embed(std::size_t t, std::size_t dim, std::size_t T) {
  if (t < 1 || t > T) throw ConfigError("time_embed: timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  if (dim < 2 || dim % 2 != 0) throw ConfigError("time_embed: dim must be even and >= 2");
  const std::size_t half = dim / 2;
  const double pos = static_cast<double>(t - 1);
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double omega = half == 1 ? 1.0 : std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half - 1));
    out[k] = std::sin(pos * omega);
    out[half + k] = std::cos(pos * omega);
  }
  return out;
}

// Init rule per tensor, applied by init_params().
struct InitRule {
  std::size_t offset, size;
  double bound;  // U(-bound, bound); 0 means a constant fill
  double fill;
};

class Registry {
 public:
  ParamLayout layout;
  std::vector<InitRule> rules;

  std::size_t uniform(const std::string& name, std::vector<std::size_t> shape, double bound) {
    const std::size_t off = layout.add(name, std::move(shape));
    rules.push_back({off, layout.specs().back().size, bound, 0.0});
    return off;
  }
  std::size_t constant(const std::string& name, std::vector<std::size_t> shape, double fill) {
    const std::size_t off = layout.add(name, std::move(shape));
    rules.push_back({off, layout.specs().back().size, 0.0, fill});
    return off;
  }

  template <class S>
  Buffer<S> init_params(std::uint64_t seed) const {
    Buffer<S> p(layout.total(), S(0));
    std::mt19937_64 rng(seed);
    for (const auto& r : rules) {
      if (r.bound == 0.0) {
        std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(r.offset), r.size, static_cast<S>(r.fill));
        continue;
      }
      std::uniform_real_distribution<double> u(-r.bound, r.bound);
      for (std::size_t i = 0; i < r.size; ++i) p[r.offset + i] = static_cast<S>(u(rng));
    }
    return p;
  }
};

struct Conv2d {
  std::size_t cin = 0, cout = 0, k = 3, stride = 1;
  std::size_t w_off = 0, b_off = 0;

  static Conv2d make(Registry& reg, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                     std::size_t stride = 1, double init_scale = 1.0) {
    Conv2d c{cin, cout, k, stride};
    const double bound = init_scale / std::sqrt(static_cast<double>(cin * k * k));
    c.w_off = reg.uniform(name + "/weight", {cout, cin, k, k}, bound);
    c.b_off = reg.constant(name + "/bias", {cout}, 0.0);
    return c;
  }
  std::size_t param_count() const { return cout * cin * k * k + cout; }
};

struct Linear {
  std::size_t in = 0, out = 0;
  std::size_t w_off = 0, b_off = 0;

  static Linear make(Registry& reg, const std::string& name, std::size_t in, std::size_t out) {
    Linear l{in, out};
    l.w_off = reg.uniform(name + "/weight", {out, in}, 1.0 / std::sqrt(static_cast<double>(in)));
    l.b_off = reg.constant(name + "/bias", {out}, 0.0);
    return l;
  }
};

// Largest group count <= 8 dividing the channel count with at least two
// channels per group. Single-channel groups would cancel the per-channel
// time-embedding shift inside residual blocks.
inline std::size_t group_count(std::size_t channels) {
  for (std::size_t g = std::min<std::size_t>(8, channels / 2); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

struct GroupNorm {
  std::size_t channels = 0, groups = 1;
  std::size_t gamma_off = 0, beta_off = 0;
  static constexpr double kEps = 1e-5;

  static GroupNorm make(Registry& reg, const std::string& name, std::size_t channels) {
    GroupNorm g{channels, group_count(channels)};
    g.gamma_off = reg.constant(name + "/gamma", {channels}, 1.0);
    g.beta_off = reg.constant(name + "/beta", {channels}, 0.0);
    return g;
  }
};

namespace detail {

template <class S>
Mat<S> im2col(const Mat<S>& x, std::size_t h, std::size_t w, std::size_t k, std::size_t stride, std::size_t ho,
              std::size_t wo) {
  const std::size_t cin = static_cast<std::size_t>(x.rows());
  const long pad = static_cast<long>(k / 2);
  Mat<S> cols = Mat<S>::Zero(static_cast<Eigen::Index>(cin * k * k), static_cast<Eigen::Index>(ho * wo));
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const S* plane = x.data() + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        S* row = cols.data() + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            row[oy * wo + ox] = plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
  }
  return cols;
}

template <class S>
Mat<S> col2im(const Mat<S>& cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
              std::size_t ho, std::size_t wo) {
  const long pad = static_cast<long>(k / 2);
  Mat<S> x = Mat<S>::Zero(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(h * w));
  for (std::size_t ci = 0; ci < cin; ++ci) {
    S* plane = x.data() + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const S* row = cols.data() + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
          }
        }
      }
  }
  return x;
}

template <class S>
using CMap = Eigen::Map<const Mat<S>>;
template <class S>
using MMap = Eigen::Map<Mat<S>>;
template <class S>
using CVec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <class S>
using MVec = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;

}  // namespace detail

template <class S>
std::size_t input(Tape<S>& tape, Mat<S> x, std::size_t h, std::size_t w) {
  return tape.push(std::move(x), h, w);
}

template <class S>
std::size_t conv2d(Tape<S>& tape, const Conv2d& c, std::size_t x) {
  const auto& nx = tape.node(x);
  if (static_cast<std::size_t>(nx.value.rows()) != c.cin) throw ConfigError("conv2d: input channel mismatch");
  const std::size_t h = nx.h, w = nx.w;
  const std::size_t pad = c.k / 2;
  const std::size_t ho = (h + 2 * pad - c.k) / c.stride + 1, wo = (w + 2 * pad - c.k) / c.stride + 1;
  const auto kk = static_cast<Eigen::Index>(c.cin * c.k * c.k);
  const detail::CMap<S> wmat(tape.param(c.w_off), static_cast<Eigen::Index>(c.cout), kk);
  const detail::CVec<S> bias(tape.param(c.b_off), static_cast<Eigen::Index>(c.cout));
  const bool pointwise = c.k == 1 && c.stride == 1;
  Mat<S> cols = pointwise ? Mat<S>() : detail::im2col(nx.value, h, w, c.k, c.stride, ho, wo);
  const Mat<S>& src = pointwise ? nx.value : cols;
  Mat<S> out = wmat * src;
  out.colwise() += bias;
  return tape.push(std::move(out), ho, wo, [c, x, h, w, ho, wo, cols = std::move(cols), pointwise](Tape<S>& t, std::size_t self) {
    const Mat<S>& dy = t.grad(self);
    const auto kk = static_cast<Eigen::Index>(c.cin * c.k * c.k);
    const Mat<S>& src = pointwise ? t.value(x) : cols;
    detail::MMap<S> dw(t.param_grad(c.w_off), static_cast<Eigen::Index>(c.cout), kk);
    detail::MVec<S> db(t.param_grad(c.b_off), static_cast<Eigen::Index>(c.cout));
    dw.noalias() += dy * src.transpose();
    db += dy.rowwise().sum();
    const detail::CMap<S> wmat(t.param(c.w_off), static_cast<Eigen::Index>(c.cout), kk);
    Mat<S> dsrc = wmat.transpose() * dy;
    if (pointwise)
      t.accumulate(x, dsrc);
    else
      t.accumulate(x, detail::col2im(dsrc, c.cin, h, w, c.k, c.stride, ho, wo));
  });
}

template <class S>
std::size_t group_norm(Tape<S>& tape, const GroupNorm& g, std::size_t x) {
  const auto& nx = tape.node(x);
  if (static_cast<std::size_t>(nx.value.rows()) != g.channels) throw ConfigError("group_norm: channel mismatch");
  const std::size_t cg = g.channels / g.groups;
  const auto n = nx.value.cols();
  Mat<S> xhat(nx.value.rows(), n);
  std::vector<S> inv_std(g.groups);
  for (std::size_t gi = 0; gi < g.groups; ++gi) {
    auto blk = nx.value.middleRows(static_cast<Eigen::Index>(gi * cg), static_cast<Eigen::Index>(cg));
    const double count = static_cast<double>(blk.size());
    const double mean = static_cast<double>(blk.sum()) / count;
    const double var = std::max(0.0, static_cast<double>(blk.array().square().sum()) / count - mean * mean);
    inv_std[gi] = static_cast<S>(1.0 / std::sqrt(var + GroupNorm::kEps));
    xhat.middleRows(static_cast<Eigen::Index>(gi * cg), static_cast<Eigen::Index>(cg)) =
        (blk.array() - static_cast<S>(mean)) * inv_std[gi];
  }
  const detail::CVec<S> gamma(tape.param(g.gamma_off), static_cast<Eigen::Index>(g.channels));
  const detail::CVec<S> beta(tape.param(g.beta_off), static_cast<Eigen::Index>(g.channels));
  Mat<S> out = (xhat.array().colwise() * gamma.array()).matrix();
  out.colwise() += beta;
  return tape.push(std::move(out), nx.h, nx.w, [g, x, cg, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<S>& t, std::size_t self) {
    const Mat<S>& dy = t.grad(self);
    detail::MVec<S> dgamma(t.param_grad(g.gamma_off), static_cast<Eigen::Index>(g.channels));
    detail::MVec<S> dbeta(t.param_grad(g.beta_off), static_cast<Eigen::Index>(g.channels));
    dgamma += (dy.array() * xhat.array()).rowwise().sum().matrix();
    dbeta += dy.rowwise().sum();
    const detail::CVec<S> gamma(t.param(g.gamma_off), static_cast<Eigen::Index>(g.channels));
    Mat<S> dxhat = (dy.array().colwise() * gamma.array()).matrix();
    Mat<S> dx(dy.rows(), dy.cols());
    for (std::size_t gi = 0; gi < g.groups; ++gi) {
      const auto r0 = static_cast<Eigen::Index>(gi * cg), rn = static_cast<Eigen::Index>(cg);
      auto dh = dxhat.middleRows(r0, rn);
      auto xh = xhat.middleRows(r0, rn);
      const S count = static_cast<S>(dh.size());
      const S m1 = dh.sum() / count;
      const S m2 = (dh.array() * xh.array()).sum() / count;
      dx.middleRows(r0, rn) = ((dh.array() - m1 - xh.array() * m2) * inv_std[gi]).matrix();
    }
    t.accumulate(x, dx);
  });
}

template <class S>
std::size_t silu(Tape<S>& tape, std::size_t x) {
  const auto& nx = tape.node(x);
  Mat<S> sig = (S(1) / (S(1) + (-nx.value.array()).exp())).matrix();
  Mat<S> out = (nx.value.array() * sig.array()).matrix();
  return tape.push(std::move(out), nx.h, nx.w, [x, sig = std::move(sig)](Tape<S>& t, std::size_t self) {
    const auto& xv = t.value(x).array();
    t.accumulate(x, (t.grad(self).array() * sig.array() * (S(1) + xv * (S(1) - sig.array()))).matrix());
  });
}

template <class S>
std::size_t add(Tape<S>& tape, std::size_t a, std::size_t b) {
  const auto& na = tape.node(a);
  const auto& nb = tape.node(b);
  if (na.value.rows() != nb.value.rows() || na.value.cols() != nb.value.cols()) throw ConfigError("add: shape mismatch");
  Mat<S> out = na.value + nb.value;
  return tape.push(std::move(out), na.h, na.w, [a, b](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, t.grad(self));
  });
}

// x (C x N) plus a per-channel vector v (C x 1).
template <class S>
std::size_t add_channel_vector(Tape<S>& tape, std::size_t x, std::size_t v) {
  const auto& nx = tape.node(x);
  const auto& nv = tape.node(v);
  if (nv.value.cols() != 1 || nv.value.rows() != nx.value.rows()) throw ConfigError("add_channel_vector: shape mismatch");
  Mat<S> out = nx.value;
  out.colwise() += nv.value.col(0);
  return tape.push(std::move(out), nx.h, nx.w, [x, v](Tape<S>& t, std::size_t self) {
    t.accumulate(x, t.grad(self));
    t.accumulate(v, t.grad(self).rowwise().sum());
  });
}

template <class S>
std::size_t linear(Tape<S>& tape, const Linear& l, std::size_t v) {
  const auto& nv = tape.node(v);
  if (nv.value.cols() != 1 || static_cast<std::size_t>(nv.value.rows()) != l.in) throw ConfigError("linear: input shape mismatch");
  const detail::CMap<S> wm(tape.param(l.w_off), static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
  const detail::CVec<S> b(tape.param(l.b_off), static_cast<Eigen::Index>(l.out));
  Mat<S> out = wm * nv.value;
  out.col(0) += b;
  return tape.push(std::move(out), 1, 1, [l, v](Tape<S>& t, std::size_t self) {
    const Mat<S>& dy = t.grad(self);
    detail::MMap<S> dw(t.param_grad(l.w_off), static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
    detail::MVec<S> db(t.param_grad(l.b_off), static_cast<Eigen::Index>(l.out));
    dw.noalias() += dy * t.value(v).transpose();
    db += dy.col(0);
    const detail::CMap<S> wm(t.param(l.w_off), static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
    t.accumulate(v, wm.transpose() * dy);
  });
}

template <class S>
std::size_t concat_channels(Tape<S>& tape, std::size_t a, std::size_t b) {
  const auto& na = tape.node(a);
  const auto& nb = tape.node(b);
  if (na.value.cols() != nb.value.cols()) throw ConfigError("concat_channels: spatial size mismatch");
  const auto ra = na.value.rows(), rb = nb.value.rows();
  Mat<S> out(ra + rb, na.value.cols());
  out.topRows(ra) = na.value;
  out.bottomRows(rb) = nb.value;
  return tape.push(std::move(out), na.h, na.w, [a, b, ra, rb](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self).topRows(ra));
    t.accumulate(b, t.grad(self).bottomRows(rb));
  });
}

// Nearest-neighbor 2x upsampling.
template <class S>
std::size_t upsample2(Tape<S>& tape, std::size_t x) {
  const auto& nx = tape.node(x);
  const std::size_t h = nx.h, w = nx.w, c = static_cast<std::size_t>(nx.value.rows());
  Mat<S> out(nx.value.rows(), static_cast<Eigen::Index>(4 * h * w));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const S* src = nx.value.data() + ch * h * w;
    S* dst = out.data() + ch * 4 * h * w;
    for (std::size_t r = 0; r < 2 * h; ++r)
      for (std::size_t col = 0; col < 2 * w; ++col) dst[r * 2 * w + col] = src[(r / 2) * w + col / 2];
  }
  return tape.push(std::move(out), 2 * h, 2 * w, [x, h, w, c](Tape<S>& t, std::size_t self) {
    const Mat<S>& dy = t.grad(self);
    Mat<S> dx = Mat<S>::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(h * w));
    for (std::size_t ch = 0; ch < c; ++ch) {
      const S* src = dy.data() + ch * 4 * h * w;
      S* dst = dx.data() + ch * h * w;
      for (std::size_t r = 0; r < 2 * h; ++r)
        for (std::size_t col = 0; col < 2 * w; ++col) dst[(r / 2) * w + col / 2] += src[r * 2 * w + col];
    }
    t.accumulate(x, dx);
  });
}

// Multi-head scaled dot-product attention over pixels. qkv is 3C x N with
// the query, key and value blocks stacked; head j uses rows [j d, (j+1) d)
// of each block. Output is C x N.
template <class S>
std::size_t attention_core(Tape<S>& tape, std::size_t qkv, std::size_t heads) {
  const auto& nq = tape.node(qkv);
  const auto c = nq.value.rows() / 3;
  if (nq.value.rows() % 3 != 0 || heads == 0 || c % static_cast<Eigen::Index>(heads) != 0)
    throw ConfigError("attention: heads must divide the attention width");
  const auto d = c / static_cast<Eigen::Index>(heads);
  const auto n = nq.value.cols();
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
  std::vector<Mat<S>> probs(heads);
  Mat<S> out(c, n);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const auto r = static_cast<Eigen::Index>(hd) * d;
    const auto q = nq.value.middleRows(r, d);
    const auto k = nq.value.middleRows(c + r, d);
    const auto v = nq.value.middleRows(2 * c + r, d);
    Mat<S> s = scale * (q.transpose() * k);  // N x N, s_ij = q_i . k_j
    for (Eigen::Index i = 0; i < n; ++i) {
      auto row = s.row(i);
      row = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
    out.middleRows(r, d) = v * s.transpose();
    if (tape.attention_log) tape.attention_log->push_back(s);
    probs[hd] = std::move(s);
  }
  return tape.push(std::move(out), nq.h, nq.w, [qkv, heads, c, d, n, scale, probs = std::move(probs)](Tape<S>& t, std::size_t self) {
    const Mat<S>& dout = t.grad(self);
    const Mat<S>& all = t.value(qkv);
    Mat<S> dqkv(3 * c, n);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const auto r = static_cast<Eigen::Index>(hd) * d;
      const auto q = all.middleRows(r, d);
      const auto k = all.middleRows(c + r, d);
      const auto v = all.middleRows(2 * c + r, d);
      const Mat<S>& p = probs[hd];
      const auto dozero = dout.middleRows(r, d);
      dqkv.middleRows(2 * c + r, d) = dozero * p;
      Mat<S> dp = dozero.transpose() * v;  // N x N
      const Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot = (dp.array() * p.array()).rowwise().sum();
      Mat<S> ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix();
      dqkv.middleRows(r, d) = scale * (k * ds.transpose());
      dqkv.middleRows(c + r, d) = scale * (q * ds);
    }
    t.accumulate(qkv, dqkv);
  });
}

struct ResBlock {
  GroupNorm gn1, gn2;
  Conv2d conv1, conv2;
  Linear temb_proj;
  bool has_skip = false;
  Conv2d skip;

  static ResBlock make(Registry& reg, const std::string& name, std::size_t cin, std::size_t cout, std::size_t temb_dim) {
    ResBlock b;
    b.gn1 = GroupNorm::make(reg, name + "/norm1", cin);
    b.conv1 = Conv2d::make(reg, name + "/conv1", cin, cout, 3);
    b.temb_proj = Linear::make(reg, name + "/temb_proj", temb_dim, cout);
    b.gn2 = GroupNorm::make(reg, name + "/norm2", cout);
    b.conv2 = Conv2d::make(reg, name + "/conv2", cout, cout, 3);
    if (cin != cout) {
      b.has_skip = true;
      b.skip = Conv2d::make(reg, name + "/skip", cin, cout, 1);
    }
    return b;
  }
};

// temb_act is the already-activated time embedding shared by all blocks.
template <class S>
std::size_t res_block(Tape<S>& tape, const ResBlock& b, std::size_t x, std::size_t temb_act) {
  std::size_t h = conv2d(tape, b.conv1, silu(tape, group_norm(tape, b.gn1, x)));
  h = add_channel_vector(tape, h, linear(tape, b.temb_proj, temb_act));
  h = conv2d(tape, b.conv2, silu(tape, group_norm(tape, b.gn2, h)));
  const std::size_t s = b.has_skip ? conv2d(tape, b.skip, x) : x;
  return add(tape, s, h);
}

struct AttentionBlock {
  GroupNorm norm;
  Conv2d qkv, proj;
  std::size_t heads = 1;

  static AttentionBlock make(Registry& reg, const std::string& name, std::size_t channels, std::size_t heads) {
    if (heads == 0 || channels % heads != 0)
      throw ConfigError("attention: heads (" + std::to_string(heads) + ") must divide width " + std::to_string(channels));
    AttentionBlock a;
    a.norm = GroupNorm::make(reg, name + "/norm", channels);
    a.qkv = Conv2d::make(reg, name + "/qkv", channels, 3 * channels, 1);
    a.proj = Conv2d::make(reg, name + "/proj", channels, channels, 1);
    a.heads = heads;
    return a;
  }
};

template <class S>
std::size_t attention_block(Tape<S>& tape, const AttentionBlock& a, std::size_t x) {
  const std::size_t qkv = conv2d(tape, a.qkv, group_norm(tape, a.norm, x));
  const std::size_t o = conv2d(tape, a.proj, attention_core(tape, qkv, a.heads));
  return add(tape, x, o);
}

}  // namespace hypersynth::nn
