#include <gtest/gtest.h>

#include <random>

#include "hypersynth/eval/report.hpp"
#include "hypersynth/unmix/autoencoder.hpp"
#include "support/oracle_scene.hpp"

using namespace hypersynth;
using namespace hypersynth::unmix;

namespace {

AeModel random_model(std::size_t c, std::vector<std::size_t> hidden, std::size_t p, std::uint64_t seed) {
  AeModel m(c, p, hidden);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.05, 0.95);
  for (auto& v : m.params()) v = u(rng);
  auto d = m.decoder();
  for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = pos(rng);
  return m;
}

HyperCube random_cube(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> data(h * w * c);
  for (auto& v : data) v = u(rng);
  return HyperCube(h, w, c, std::move(data));
}

eval::SceneSpec noiseless_spec() {
  eval::SceneSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.bands = 24;
  spec.seed = 2;
  return spec;
}

}  // namespace

TEST(AeEncode, OutputsOnSimplexForRandomInputs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = random_model(7, {5, 4}, 3, seed);
    for (auto& v : m.params()) v *= 10.0;  // saturate tanh and the softmax
    const auto a = ae_encode(m, random_cube(6, 5, 7, seed + 50)).matrix();
    EXPECT_LT((a.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
    EXPECT_GE(a.minCoeff(), 0.0);
  }
}

TEST(AeEncode, ZeroWeightsGiveUniformAbundances) {
  AeModel m(6, 4, {8});
  const auto a = ae_encode(m, random_cube(3, 3, 6, 1)).matrix();
  EXPECT_LT((a.array() - 0.25).abs().maxCoeff(), 1e-7);
}

TEST(AeEncode, BandMismatch) {
  AeModel m(6, 3, {4});
  EXPECT_THROW(ae_encode(m, random_cube(2, 2, 5, 0)), ConfigError);
}

TEST(AeDecode, LinearInAbundances) {
  const auto m = random_model(5, {4}, 3, 7);
  for (Eigen::Index k = 0; k < 3; ++k) {
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(3, 1);
    onehot(k, 0) = 1.0;
    const auto y = ae_decode(m, AbundanceStack::from_matrix(onehot, 1, 1, true)).matrix();
    EXPECT_LT((y.col(0) - m.decoder().col(k)).cwiseAbs().maxCoeff(), 1e-7);
  }
  const auto y = ae_decode(m, AbundanceStack::from_matrix(Eigen::MatrixXd::Constant(3, 1, 1.0 / 3.0), 1, 1, true)).matrix();
  EXPECT_LT((y.col(0) - m.decoder().rowwise().mean()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(ae_decode(m, AbundanceStack::from_matrix(Eigen::MatrixXd::Constant(2, 1, 0.5), 1, 1, true)), ConfigError);
}

class AeGradient : public ::testing::TestWithParam<double> {};

TEST_P(AeGradient, MatchesCentralDifferences) {
  const double volume = GetParam();
  auto m = random_model(5, {4}, 3, 11);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(5, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);

  nn::Buffer<double> grad;
  ae_loss_and_grad(m, x, &grad, volume);
  const double h = 1e-6;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const double keep = m.params()[i];
    m.params()[i] = keep + h;
    const double up = ae_loss_and_grad(m, x, nullptr, volume);
    m.params()[i] = keep - h;
    const double down = ae_loss_and_grad(m, x, nullptr, volume);
    m.params()[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    EXPECT_LT(rel, 1e-4) << m.layout().owner(i) << " index " << i << " fd " << fd << " analytic " << grad[i];
  }
}

INSTANTIATE_TEST_SUITE_P(VolumeWeights, AeGradient, ::testing::Values(0.0, 0.05));

TEST(AeTrain, ZeroEpochsKeepsGeometricDecoder) {
  const auto scene = test_support::normalized_scene(noiseless_spec());
  AeConfig cfg;
  cfg.epochs = 0;
  const auto out = ae_train(scene.cube, cfg);
  EXPECT_EQ(out.result.endmembers, geometric_endmember_init(scene.cube, 3).endmembers);
  EXPECT_TRUE(out.result.objective_trace.empty());
  EXPECT_EQ(out.result.method, Method::DL);
}

TEST(AeTrain, DecoderStaysInBoxUnderLargeSteps) {
  const auto scene = test_support::normalized_scene(noiseless_spec());
  AeConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.5;
  const auto out = ae_train(scene.cube, cfg);
  EXPECT_GE(out.model.decoder().minCoeff(), 0.0);
  EXPECT_LE(out.model.decoder().maxCoeff(), 1.0);
}

TEST(AeTrain, NoiselessRecoveryAndPurePixels) {
  const auto scene = test_support::normalized_scene(noiseless_spec());
  AeConfig cfg;
  const auto out = ae_train(scene.cube, cfg);
  const auto rep = eval::recovery_report(out.result.endmembers, out.result.abundances, scene.truth_endmembers,
                                         scene.truth_abundances);
  for (double s : rep.sad_deg) EXPECT_LT(s, 5.0);
  EXPECT_LT(rep.abundance_rmse, 0.05);

  // Loss trend, smoothed over 10-epoch windows.
  const auto& tr = out.result.objective_trace;
  ASSERT_EQ(tr.size(), cfg.epochs);
  auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 10; ++i) s += tr[i];
    return s / 10.0;
  };
  EXPECT_LT(window(tr.size() - 10), window(0));

  // The purest truth pixel of each endmember is assigned to its matched channel.
  const Eigen::MatrixXd truth = scene.truth_abundances.matrix();
  const Eigen::MatrixXd est = out.result.abundances.matrix();
  for (Eigen::Index k = 0; k < 3; ++k) {
    Eigen::Index px;
    truth.row(k).maxCoeff(&px);
    if (truth(k, px) < 0.999) continue;
    Eigen::Index arg;
    const double top = est.col(px).maxCoeff(&arg);
    EXPECT_EQ(static_cast<std::size_t>(arg), rep.perm[static_cast<std::size_t>(k)]);
    EXPECT_GT(top, 0.9);
  }
}

TEST(AeTrain, ReproduciblePerSeed) {
  const auto scene = test_support::normalized_scene(noiseless_spec());
  AeConfig cfg;
  cfg.epochs = 5;
  const auto a = ae_train(scene.cube, cfg), b = ae_train(scene.cube, cfg);
  EXPECT_EQ(a.model.params(), b.model.params());
  cfg.seed = 1;
  EXPECT_NE(ae_train(scene.cube, cfg).model.params(), a.model.params());
}

TEST(AeTrain, RejectsBadInput) {
  AeConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(ae_train(random_cube(4, 4, 5, 0), cfg), ConfigError);
  EXPECT_THROW(ae_train(HyperCube(2, 2, 5, std::vector<float>(20, 2.0f)), AeConfig{}), ConfigError);
}
