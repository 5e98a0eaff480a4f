#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/eval/matching.hpp"
#include "hypersynth/eval/metrics.hpp"

namespace hypersynth::eval {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> variance;
};

struct SampleStatistics {
  ChannelStats generated;
  ChannelStats reference;
  std::vector<double> mean_gap;      // generated - reference
  std::vector<double> variance_gap;  // generated - reference
  std::vector<double> variance_ratio;
  // |sum_k a_k - 1| per generated pixel.
  double sum_violation_median = 0.0;
  double sum_violation_p90 = 0.0;
  double sum_violation_max = 0.0;
  double nearest_neighbor_distance = 0.0;
};

struct RecoveryReport {
  std::vector<std::size_t> perm;
  std::vector<double> sad_deg;
  double abundance_rmse = 0.0;
  std::vector<double> psnr_db;
  std::vector<double> ssim;
};

struct EvalReport {
  std::optional<RecoveryReport> recovery;
  std::optional<SampleStatistics> samples;
};

inline ChannelStats channel_stats(std::span<const Patch> patches) {
  const std::size_t p = patches.front().channels;
  ChannelStats st{std::vector<double>(p, 0.0), std::vector<double>(p, 0.0)};
  for (std::size_t k = 0; k < p; ++k) {
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (const auto& patch : patches)
      for (std::size_t i = 0; i < patch.pixels(); ++i) {
        const double v = patch.data[k * patch.pixels() + i];
        sum += v;
        sq += v * v;
        n += 1.0;
      }
    st.mean[k] = sum / n;
    st.variance[k] = std::max(0.0, sq / n - st.mean[k] * st.mean[k]);
  }
  return st;
}

namespace detail {

inline std::vector<double> pooled_features(const Patch& patch) {
  const std::size_t fr = std::max<std::size_t>(1, patch.height / 8), fc = std::max<std::size_t>(1, patch.width / 8);
  const std::size_t oh = patch.height / fr, ow = patch.width / fc;
  std::vector<double> out;
  out.reserve(patch.channels * oh * ow);
  for (std::size_t k = 0; k < patch.channels; ++k)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < fr; ++i)
          for (std::size_t j = 0; j < fc; ++j) acc += patch.at(k, r * fr + i, c * fc + j);
        out.push_back(acc / static_cast<double>(fr * fc));
      }
  return out;
}

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

// Distribution-level comparison of a generated patch set against a reference
// set: channel moments, simplex violation, nearest-neighbor distance in an
// average-pooled (at most 8x8) patch space, as per-element RMS distance.
inline SampleStatistics sample_statistics(std::span<const Patch> generated, std::span<const Patch> reference) {
  if (generated.empty() || reference.empty()) throw ConfigError("sample_statistics: empty patch set");
  const std::size_t p = generated.front().channels;
  for (const auto& set : {generated, reference})
    for (const auto& patch : set)
      if (patch.channels != p) throw ConfigError("sample_statistics: channel count mismatch");

  SampleStatistics st;
  st.generated = channel_stats(generated);
  st.reference = channel_stats(reference);
  for (std::size_t k = 0; k < p; ++k) {
    st.mean_gap.push_back(st.generated.mean[k] - st.reference.mean[k]);
    st.variance_gap.push_back(st.generated.variance[k] - st.reference.variance[k]);
    st.variance_ratio.push_back(st.reference.variance[k] > 0.0 ? st.generated.variance[k] / st.reference.variance[k]
                                                               : (st.generated.variance[k] > 0.0 ? std::numeric_limits<double>::max() : 1.0));
  }

  std::vector<double> viol;
  for (const auto& patch : generated)
    for (std::size_t i = 0; i < patch.pixels(); ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < p; ++k) sum += patch.data[k * patch.pixels() + i];
      viol.push_back(std::abs(sum - 1.0));
    }
  st.sum_violation_median = detail::quantile(viol, 0.5);
  st.sum_violation_p90 = detail::quantile(viol, 0.9);
  st.sum_violation_max = *std::max_element(viol.begin(), viol.end());

  std::vector<std::vector<double>> ref_feat;
  for (const auto& patch : reference) ref_feat.push_back(detail::pooled_features(patch));
  double nn_total = 0.0;
  for (const auto& patch : generated) {
    const auto f = detail::pooled_features(patch);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : ref_feat) {
      if (r.size() != f.size()) throw ConfigError("sample_statistics: patch size mismatch");
      double d = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) d += (f[i] - r[i]) * (f[i] - r[i]);
      best = std::min(best, d);
    }
    nn_total += std::sqrt(best / static_cast<double>(f.size()));
  }
  st.nearest_neighbor_distance = nn_total / static_cast<double>(generated.size());
  return st;
}

// Endmember/abundance recovery against ground truth, after matching.
inline RecoveryReport recovery_report(const EndmemberMatrix& est_e, const AbundanceStack& est_a,
                                      const EndmemberMatrix& truth_e, const AbundanceStack& truth_a) {
  if (est_a.channels() != truth_a.channels() || est_a.pixels() != truth_a.pixels())
    throw ConfigError("recovery_report: abundance shape mismatch");
  const Matching m = match_endmembers(est_e, truth_e);
  RecoveryReport rep;
  rep.perm = m.perm;
  rep.sad_deg = m.sad_deg;
  const Eigen::MatrixXd a = permute_abundances(est_a.matrix(), m.perm);
  const Eigen::MatrixXd t = truth_a.matrix();
  rep.abundance_rmse = rmse(a, t);
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    Eigen::MatrixXd ak(truth_a.height(), truth_a.width()), tk(truth_a.height(), truth_a.width());
    for (std::size_t r = 0; r < truth_a.height(); ++r)
      for (std::size_t c = 0; c < truth_a.width(); ++c) {
        ak(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a(k, static_cast<Eigen::Index>(r * truth_a.width() + c));
        tk(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t(k, static_cast<Eigen::Index>(r * truth_a.width() + c));
      }
    rep.psnr_db.push_back(psnr(ak, tk, 1.0));
    rep.ssim.push_back(ssim(ak, tk, 1.0));
  }
  return rep;
}

namespace detail {

// JSON has no infinity; an infinite PSNR is written as the string "inf".
inline nlohmann::json finite_or_tag(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const EvalReport& rep) {
  nlohmann::json j = nlohmann::json::object();
  if (rep.recovery) {
    const auto& r = *rep.recovery;
    nlohmann::json psnr = nlohmann::json::array();
    for (double v : r.psnr_db) psnr.push_back(detail::finite_or_tag(v));
    j["recovery"] = {{"permutation", r.perm}, {"sad_deg", r.sad_deg}, {"abundance_rmse", r.abundance_rmse},
                     {"psnr_db", psnr},       {"ssim", r.ssim}};
  }
  if (rep.samples) {
    const auto& s = *rep.samples;
    j["samples"] = {{"generated_mean", s.generated.mean},
                    {"generated_variance", s.generated.variance},
                    {"reference_mean", s.reference.mean},
                    {"reference_variance", s.reference.variance},
                    {"mean_gap", s.mean_gap},
                    {"variance_gap", s.variance_gap},
                    {"variance_ratio", s.variance_ratio},
                    {"sum_violation", {{"median", s.sum_violation_median}, {"p90", s.sum_violation_p90}, {"max", s.sum_violation_max}}},
                    {"nearest_neighbor_distance", s.nearest_neighbor_distance}};
  }
  return j;
}

// One row per endmember: index, matched estimate, SAD, PSNR, SSIM.
inline void write_recovery_csv(const RecoveryReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "endmember,matched_estimate,sad_deg,psnr_db,ssim\n";
  out.precision(10);
  for (std::size_t j = 0; j < r.perm.size(); ++j)
    out << j << "," << r.perm[j] << "," << r.sad_deg[j] << "," << r.psnr_db[j] << "," << r.ssim[j] << "\n";
}

}  // namespace hypersynth::eval
