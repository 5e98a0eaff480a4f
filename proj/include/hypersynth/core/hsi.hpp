#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hypersynth/core/error.hpp"

namespace hypersynth {

// Multi-band image stored band-sequential: value(b, r, c) lives at
// data[b * height * width + r * width + c]. Viewed as a matrix it is the
// C x S observation matrix with one column per pixel.
class HyperCube {
 public:
  HyperCube() = default;

  HyperCube(std::size_t height, std::size_t width, std::size_t bands, std::vector<float> data,
            std::optional<std::vector<double>> wavelengths = std::nullopt,
            std::optional<std::vector<bool>> nodata_mask = std::nullopt)
      : height_(height),
        width_(width),
        bands_(bands),
        data_(std::move(data)),
        wavelengths_(std::move(wavelengths)),
        nodata_(std::move(nodata_mask)) {
    if (height_ == 0 || width_ == 0 || bands_ == 0)
      throw ConfigError("HyperCube: dimensions must be positive");
    if (data_.size() != height_ * width_ * bands_)
      throw ConfigError("HyperCube: data length " + std::to_string(data_.size()) +
                        " does not match " + std::to_string(height_) + "x" + std::to_string(width_) +
                        "x" + std::to_string(bands_));
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (!std::isfinite(data_[i]))
        throw ConfigError("HyperCube: non-finite value at offset " + std::to_string(i));
    if (wavelengths_ && wavelengths_->size() != bands_)
      throw ConfigError("HyperCube: wavelength list length differs from band count");
    if (nodata_ && nodata_->size() != pixels())
      throw ConfigError("HyperCube: nodata mask length differs from pixel count");
  }

  // Builds a cube from a C x S matrix (one column per pixel).
  static HyperCube from_matrix(const Eigen::MatrixXd& y, std::size_t height, std::size_t width,
                               std::optional<std::vector<double>> wavelengths = std::nullopt) {
    if (static_cast<std::size_t>(y.cols()) != height * width)
      throw ConfigError("HyperCube::from_matrix: column count differs from height*width");
    std::vector<float> data(static_cast<std::size_t>(y.size()));
    const std::size_t s = height * width;
    for (Eigen::Index b = 0; b < y.rows(); ++b)
      for (Eigen::Index p = 0; p < y.cols(); ++p)
        data[static_cast<std::size_t>(b) * s + static_cast<std::size_t>(p)] = static_cast<float>(y(b, p));
    return HyperCube(height, width, static_cast<std::size_t>(y.rows()), std::move(data),
                     std::move(wavelengths));
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t bands() const { return bands_; }
  std::size_t pixels() const { return height_ * width_; }

  std::span<const float> data() const { return data_; }
  std::span<const float> band(std::size_t b) const { return {data_.data() + b * pixels(), pixels()}; }
  float value(std::size_t b, std::size_t r, std::size_t c) const { return data_[b * pixels() + r * width_ + c]; }

  const std::optional<std::vector<double>>& wavelengths() const { return wavelengths_; }
  const std::optional<std::vector<bool>>& nodata_mask() const { return nodata_; }
  bool is_nodata(std::size_t pixel) const { return nodata_ && (*nodata_)[pixel]; }

  // C x S matrix in double precision.
  Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd y(bands_, pixels());
    for (std::size_t b = 0; b < bands_; ++b)
      for (std::size_t p = 0; p < pixels(); ++p) y(b, p) = data_[b * pixels() + p];
    return y;
  }

  // True when every value lies in [0, 1].
  bool is_normalized() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
  }

  bool operator==(const HyperCube&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t bands_ = 0;
  std::vector<float> data_;
  std::optional<std::vector<double>> wavelengths_;
  std::optional<std::vector<bool>> nodata_;
};

// C x p matrix of endmember signatures, one column per material.
class EndmemberMatrix {
 public:
  EndmemberMatrix() = default;

  explicit EndmemberMatrix(Eigen::MatrixXd signatures) : sig_(std::move(signatures)) {
    if (sig_.rows() == 0 || sig_.cols() == 0) throw ConfigError("EndmemberMatrix: empty matrix");
    for (Eigen::Index j = 0; j < sig_.cols(); ++j) {
      for (Eigen::Index i = 0; i < sig_.rows(); ++i) {
        const double v = sig_(i, j);
        if (!(v >= 0.0 && v <= 1.0))
          throw ConfigError("EndmemberMatrix: entry (" + std::to_string(i) + "," + std::to_string(j) +
                            ") outside [0,1]");
      }
      if (sig_.col(j).isZero(0.0))
        throw ConfigError("EndmemberMatrix: column " + std::to_string(j) + " is all zero");
    }
  }

  std::size_t bands() const { return static_cast<std::size_t>(sig_.rows()); }
  std::size_t count() const { return static_cast<std::size_t>(sig_.cols()); }
  const Eigen::MatrixXd& signatures() const { return sig_; }

  bool operator==(const EndmemberMatrix& other) const { return sig_ == other.sig_; }

 private:
  Eigen::MatrixXd sig_;
};

constexpr double kSimplexTolerance = 1e-6;

// p-channel abundance field, channel-sequential like HyperCube.
class AbundanceStack {
 public:
  AbundanceStack() = default;

  AbundanceStack(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data,
                 bool strict_simplex)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)), strict_(strict_simplex) {
    if (height_ == 0 || width_ == 0 || channels_ == 0)
      throw ConfigError("AbundanceStack: dimensions must be positive");
    if (data_.size() != height_ * width_ * channels_)
      throw ConfigError("AbundanceStack: data length does not match dimensions");
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (!std::isfinite(data_[i]))
        throw ConfigError("AbundanceStack: non-finite value at offset " + std::to_string(i));
    if (strict_) {
      const std::size_t s = pixels();
      for (std::size_t px = 0; px < s; ++px) {
        double sum = 0.0;
        for (std::size_t k = 0; k < channels_; ++k) {
          const float v = data_[k * s + px];
          if (v < 0.0f) throw ConfigError("AbundanceStack: negative abundance at pixel " + std::to_string(px));
          sum += v;
        }
        if (std::abs(sum - 1.0) > kSimplexTolerance)
          throw ConfigError("AbundanceStack: pixel " + std::to_string(px) + " sums to " + std::to_string(sum));
      }
    }
  }

  // From a p x S matrix. A strict stack is clipped at zero and renormalized
  // per pixel before rounding to float.
  static AbundanceStack from_matrix(const Eigen::MatrixXd& a, std::size_t height, std::size_t width,
                                    bool strict_simplex) {
    if (static_cast<std::size_t>(a.cols()) != height * width)
      throw ConfigError("AbundanceStack::from_matrix: column count differs from height*width");
    const std::size_t s = height * width;
    const std::size_t p = static_cast<std::size_t>(a.rows());
    std::vector<float> data(p * s);
    for (std::size_t px = 0; px < s; ++px) {
      double total = 0.0;
      if (strict_simplex)
        for (std::size_t k = 0; k < p; ++k)
          total += std::max(a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(px)), 0.0);
      for (std::size_t k = 0; k < p; ++k) {
        double v = a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(px));
        if (strict_simplex) v = total > 0.0 ? std::max(v, 0.0) / total : 1.0 / static_cast<double>(p);
        data[k * s + px] = static_cast<float>(v);
      }
    }
    return AbundanceStack(height, width, p, std::move(data), strict_simplex);
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t pixels() const { return height_ * width_; }
  bool strict_simplex() const { return strict_; }

  std::span<const float> data() const { return data_; }
  std::span<const float> channel(std::size_t k) const { return {data_.data() + k * pixels(), pixels()}; }
  float value(std::size_t k, std::size_t r, std::size_t c) const { return data_[k * pixels() + r * width_ + c]; }

  // p x S matrix in double precision.
  Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd a(channels_, pixels());
    for (std::size_t k = 0; k < channels_; ++k)
      for (std::size_t p = 0; p < pixels(); ++p) a(k, p) = data_[k * pixels() + p];
    return a;
  }

  bool operator==(const AbundanceStack&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
  bool strict_ = false;
};

// Rectangular crop of an abundance stack, channel-sequential.
struct Patch {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;
  std::string source_id;

  std::size_t pixels() const { return height * width; }
  float& at(std::size_t k, std::size_t r, std::size_t c) { return data[k * pixels() + r * width + c]; }
  float at(std::size_t k, std::size_t r, std::size_t c) const { return data[k * pixels() + r * width + c]; }

  AbundanceStack to_stack(bool strict_simplex) const {
    return AbundanceStack(height, width, channels, data, strict_simplex);
  }

  bool operator==(const Patch&) const = default;
};

// Removes the listed bands, keeping the rest in their original order.
inline HyperCube drop_bands(const HyperCube& cube, std::span<const std::size_t> band_indices) {
  std::vector<bool> drop(cube.bands(), false);
  for (std::size_t idx : band_indices) {
    if (idx >= cube.bands())
      throw ConfigError("drop_bands: index " + std::to_string(idx) + " out of range for " +
                        std::to_string(cube.bands()) + " bands");
    if (drop[idx]) throw ConfigError("drop_bands: duplicate index " + std::to_string(idx));
    drop[idx] = true;
  }
  const std::size_t kept = cube.bands() - band_indices.size();
  if (kept == 0) throw ConfigError("drop_bands: every band would be removed");

  std::vector<float> data;
  data.reserve(kept * cube.pixels());
  std::optional<std::vector<double>> wl;
  if (cube.wavelengths()) wl.emplace();
  for (std::size_t b = 0; b < cube.bands(); ++b) {
    if (drop[b]) continue;
    const auto band = cube.band(b);
    data.insert(data.end(), band.begin(), band.end());
    if (wl) wl->push_back((*cube.wavelengths())[b]);
  }
  return HyperCube(cube.height(), cube.width(), kept, std::move(data), std::move(wl), cube.nodata_mask());
}

inline HyperCube drop_bands(const HyperCube& cube, std::initializer_list<std::size_t> band_indices) {
  return drop_bands(cube, std::span<const std::size_t>(band_indices.begin(), band_indices.size()));
}

// Row-major sliding-window crops; windows that would cross the border are
// discarded.
inline std::vector<Patch> extract_patches(const AbundanceStack& stack, std::pair<std::size_t, std::size_t> size,
                                          std::pair<std::size_t, std::size_t> stride,
                                          const std::string& source_id = {}) {
  const auto [ph, pw] = size;
  const auto [sh, sw] = stride;
  if (ph == 0 || pw == 0) throw ConfigError("extract_patches: patch size must be positive");
  if (sh == 0 || sw == 0) throw ConfigError("extract_patches: stride must be at least 1");
  if (ph > stack.height() || pw > stack.width())
    throw ConfigError("extract_patches: patch " + std::to_string(ph) + "x" + std::to_string(pw) +
                      " exceeds stack " + std::to_string(stack.height()) + "x" + std::to_string(stack.width()));

  const std::size_t rows = (stack.height() - ph) / sh + 1;
  const std::size_t cols = (stack.width() - pw) / sw + 1;
  std::vector<Patch> out;
  out.reserve(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      Patch p{i * sh, j * sw, ph, pw, stack.channels(), std::vector<float>(stack.channels() * ph * pw), source_id};
      for (std::size_t k = 0; k < stack.channels(); ++k)
        for (std::size_t r = 0; r < ph; ++r)
          for (std::size_t c = 0; c < pw; ++c) p.at(k, r, c) = stack.value(k, p.row + r, p.col + c);
      out.push_back(std::move(p));
    }
  }
  return out;
}

// Per-band affine map used by normalize_cube: v' = (v - offset) / scale.
// Constant bands have scale 0 and map to 0.
struct BandScaling {
  std::vector<double> offset;
  std::vector<double> scale;

  // Applies the same per-band map to endmember signatures, which keeps the
  // linear mixing model intact because abundances sum to one.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& signatures) const {
    Eigen::MatrixXd out(signatures.rows(), signatures.cols());
    for (Eigen::Index b = 0; b < signatures.rows(); ++b)
      for (Eigen::Index j = 0; j < signatures.cols(); ++j) {
        const double s = scale[static_cast<std::size_t>(b)];
        out(b, j) = s > 0.0 ? (signatures(b, j) - offset[static_cast<std::size_t>(b)]) / s : 0.0;
      }
    return out;
  }
};

// Min-max per band over valid (non-nodata) pixels.
inline std::pair<HyperCube, BandScaling> normalize_cube_with_scaling(const HyperCube& cube) {
  BandScaling scaling;
  scaling.offset.resize(cube.bands());
  scaling.scale.resize(cube.bands());
  std::vector<float> data(cube.data().begin(), cube.data().end());
  const std::size_t s = cube.pixels();
  for (std::size_t b = 0; b < cube.bands(); ++b) {
    float lo = 0.0f, hi = 0.0f;
    bool seen = false;
    for (std::size_t p = 0; p < s; ++p) {
      if (cube.is_nodata(p)) continue;
      const float v = data[b * s + p];
      if (!seen) {
        lo = hi = v;
        seen = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    const double range = static_cast<double>(hi) - static_cast<double>(lo);
    scaling.offset[b] = lo;
    scaling.scale[b] = range;
    for (std::size_t p = 0; p < s; ++p) {
      float& v = data[b * s + p];
      if (range > 0.0) {
        const double scaled = (static_cast<double>(v) - lo) / range;
        v = static_cast<float>(std::clamp(scaled, 0.0, 1.0));
      } else {
        v = 0.0f;
      }
    }
  }
  return {HyperCube(cube.height(), cube.width(), cube.bands(), std::move(data), cube.wavelengths(),
                    cube.nodata_mask()),
          std::move(scaling)};
}

inline HyperCube normalize_cube(const HyperCube& cube) { return normalize_cube_with_scaling(cube).first; }

}  // namespace hypersynth
