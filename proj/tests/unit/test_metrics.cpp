#include <gtest/gtest.h>

#include <random>

#include "hypersynth/eval/matching.hpp"
#include "hypersynth/eval/metrics.hpp"
#include "hypersynth/eval/report.hpp"
#include "hypersynth/eval/scene.hpp"

using namespace hypersynth;
using namespace hypersynth::eval;

namespace {

Eigen::MatrixXd random_field(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Patch make_patch(std::size_t h, std::size_t w, std::size_t p, std::vector<float> data) {
  return Patch{0, 0, h, w, p, std::move(data), {}};
}

}  // namespace

TEST(Sad, ClosedForms) {
  Eigen::Vector2d u(1, 0), v(1, 1), o(0, 1);
  EXPECT_DOUBLE_EQ(sad(u, u), 0.0);
  EXPECT_NEAR(sad(u, o), 90.0, 1e-12);
  EXPECT_NEAR(sad(u, v), 45.0, 1e-12);
  EXPECT_THROW(sad(u, Eigen::Vector2d::Zero()), ConfigError);
}

TEST(Sad, SymmetricAndScaleInvariant) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd u(7), v(7);
    for (int k = 0; k < 7; ++k) {
      u(k) = n(rng);
      v(k) = n(rng);
    }
    const double c = 0.01 + std::abs(n(rng)) * 10;
    EXPECT_NEAR(sad(u, v), sad(v, u), 1e-12);
    EXPECT_NEAR(sad(u, c * v), sad(u, v), 1e-9);
    EXPECT_GE(sad(u, v), 0.0);
    EXPECT_LE(sad(u, v), 180.0);
  }
}

TEST(ImageMetrics, Identities) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd x = random_field(rng, 20, 24);
  EXPECT_EQ(rmse(x, x), 0.0);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
  EXPECT_TRUE(std::isinf(psnr(x, x)));
}

TEST(ImageMetrics, ConstantFieldsClosedForm) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Zero(8, 8), b = Eigen::MatrixXd::Constant(8, 8, 0.1);
  EXPECT_NEAR(rmse(a, b), 0.1, 1e-15);
  EXPECT_NEAR(psnr(a, b, 1.0), 20.0, 1e-12);
}

TEST(ImageMetrics, InvertedFieldHasLowSsim) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd x = random_field(rng, 32, 32);
  const Eigen::MatrixXd inv = (1.0 - x.array()).matrix();
  EXPECT_LT(ssim(x, inv), 0.5);
}

TEST(ImageMetrics, ShapeMismatch) {
  EXPECT_THROW(rmse(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 3)), ConfigError);
  EXPECT_THROW(ssim(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(3, 2)), ConfigError);
}

TEST(ImageMetrics, PsnrDecreasesAsRmseGrows) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const Eigen::MatrixXd ref = random_field(rng, 6, 6);
    const Eigen::MatrixXd a = ref + 0.05 * random_field(rng, 6, 6);
    const Eigen::MatrixXd b = ref + 0.3 * random_field(rng, 6, 6);
    const bool rmse_up = rmse(ref, b) > rmse(ref, a);
    EXPECT_EQ(rmse_up, psnr(ref, b) < psnr(ref, a));
  }
}

TEST(Matching, IdentityAndKnownPermutation) {
  SceneSpec spec;
  spec.p = 4;
  spec.height = spec.width = 4;
  const auto truth = generate_scene(spec).endmembers;
  const auto self = match_endmembers(truth, truth);
  EXPECT_EQ(self.perm, (std::vector<std::size_t>{0, 1, 2, 3}));
  for (double s : self.sad_deg) EXPECT_NEAR(s, 0.0, 1e-6);

  const std::vector<std::size_t> shuffle{2, 0, 3, 1};
  Eigen::MatrixXd permuted(truth.bands(), 4);
  for (std::size_t j = 0; j < 4; ++j) permuted.col(static_cast<Eigen::Index>(shuffle[j])) = truth.signatures().col(static_cast<Eigen::Index>(j));
  const auto m = match_endmembers(EndmemberMatrix(permuted), truth);
  EXPECT_EQ(m.perm, shuffle);
}

TEST(Matching, ExhaustiveEqualsHungarian) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd cost(5, 5);
    for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = u(rng) * 90.0;
    auto total = [&](const std::vector<std::size_t>& perm) {
      double t = 0.0;
      for (std::size_t i = 0; i < perm.size(); ++i) t += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
      return t;
    };
    EXPECT_NEAR(total(assign_exhaustive(cost)), total(assign_hungarian(cost)), 1e-9);
  }
}

TEST(Matching, NeverWorseThanIdentity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneSpec spec;
    spec.p = 3;
    spec.height = spec.width = 2;
    spec.seed = seed;
    const auto a = generate_scene(spec).endmembers;
    spec.seed = seed + 100;
    const auto b = generate_scene(spec).endmembers;
    const auto m = match_endmembers(a, b);
    double identity = 0.0;
    for (Eigen::Index j = 0; j < 3; ++j) identity += sad(a.signatures().col(j), b.signatures().col(j));
    EXPECT_LE(m.total(), identity + 1e-12);
  }
}

TEST(Matching, CountMismatch) {
  SceneSpec spec;
  spec.height = spec.width = 2;
  spec.p = 3;
  const auto a = generate_scene(spec).endmembers;
  spec.p = 4;
  EXPECT_THROW(match_endmembers(a, generate_scene(spec).endmembers), ConfigError);
}

TEST(Scene, NoiselessMixIsExact) {
  SceneSpec spec;
  spec.height = spec.width = 16;
  const auto s = generate_scene(spec);
  const Eigen::MatrixXd resid = s.cube.matrix() - s.endmembers.signatures() * s.abundances.matrix();
  EXPECT_LT(resid.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_TRUE(s.abundances.strict_simplex());
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = i + 1; j < 3; ++j)
      EXPECT_GT(sad(s.endmembers.signatures().col(i), s.endmembers.signatures().col(j)), 10.0);
}

TEST(Scene, RealizedSnrMatchesRequest) {
  SceneSpec spec;
  spec.snr_db = 30.0;
  const auto s = generate_scene(spec);
  const Eigen::MatrixXd clean = s.endmembers.signatures() * s.abundances.matrix();
  const Eigen::MatrixXd noise = s.cube.matrix() - clean;
  const double snr = 10.0 * std::log10(clean.squaredNorm() / noise.squaredNorm());
  EXPECT_NEAR(snr, 30.0, 0.5);
}

TEST(Scene, ReproduciblePerSeed) {
  SceneSpec spec;
  spec.height = spec.width = 12;
  spec.snr_db = 25.0;
  const auto a = generate_scene(spec), b = generate_scene(spec);
  EXPECT_EQ(a.cube, b.cube);
  EXPECT_EQ(a.abundances, b.abundances);
  spec.seed = 1;
  EXPECT_FALSE(generate_scene(spec).cube == a.cube);
}

TEST(Scene, ImpossibleSeparationFails) {
  SceneSpec spec;
  spec.height = spec.width = 2;
  spec.p = 6;
  spec.min_pairwise_sad_deg = 89.0;
  EXPECT_THROW(generate_scene(spec), ConfigError);
}

TEST(SampleStatistics, IdenticalSetsHaveZeroGaps) {
  SceneSpec spec;
  spec.height = spec.width = 32;
  const auto patches = extract_patches(generate_scene(spec).abundances, {8, 8}, {8, 8});
  const auto st = sample_statistics(patches, patches);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(st.mean_gap[k], 0.0);
    EXPECT_EQ(st.variance_gap[k], 0.0);
  }
  EXPECT_EQ(st.nearest_neighbor_distance, 0.0);
  EXPECT_LT(st.sum_violation_max, 1e-6);
}

TEST(SampleStatistics, NoiseHasLargerVarianceGapThanSmoothSet) {
  SceneSpec spec;
  spec.height = spec.width = 32;
  const auto ref = extract_patches(generate_scene(spec).abundances, {8, 8}, {8, 8});
  spec.seed = 9;
  const auto smooth = extract_patches(generate_scene(spec).abundances, {8, 8}, {8, 8});
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.33f, 1.0f);
  std::vector<Patch> noise;
  for (int i = 0; i < 16; ++i) {
    std::vector<float> d(3 * 64);
    for (auto& v : d) v = n(rng);
    noise.push_back(make_patch(8, 8, 3, d));
  }
  const auto s_smooth = sample_statistics(smooth, ref);
  const auto s_noise = sample_statistics(noise, ref);
  double gap_smooth = 0, gap_noise = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    gap_smooth += std::abs(s_smooth.variance_gap[k]);
    gap_noise += std::abs(s_noise.variance_gap[k]);
  }
  EXPECT_GT(gap_noise, gap_smooth);
  EXPECT_GT(s_noise.nearest_neighbor_distance, s_smooth.nearest_neighbor_distance);
  const auto j = to_json(EvalReport{std::nullopt, s_noise});
  for (const auto& v : j["samples"]["variance_ratio"]) EXPECT_TRUE(std::isfinite(v.get<double>()));
}

TEST(SampleStatistics, Errors) {
  std::vector<Patch> empty;
  std::vector<Patch> one{make_patch(2, 2, 2, std::vector<float>(8, 0.5f))};
  std::vector<Patch> other{make_patch(2, 2, 3, std::vector<float>(12, 0.3f))};
  EXPECT_THROW(sample_statistics(empty, one), ConfigError);
  EXPECT_THROW(sample_statistics(one, other), ConfigError);
}
