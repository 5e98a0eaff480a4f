#include <gtest/gtest.h>

#include <random>
#include <set>

#include "hypersynth/unmix/endmember_init.hpp"
#include "hypersynth/unmix/simplex.hpp"

using namespace hypersynth;
using namespace hypersynth::unmix;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

struct GridOptimum {
  Eigen::VectorXd a;
  double objective;
};

// Exhaustive search over the 3-simplex grid with the given resolution.
GridOptimum grid_oracle(const Eigen::VectorXd& y, const Eigen::MatrixXd& e, int steps) {
  GridOptimum best{Eigen::VectorXd::Zero(3), std::numeric_limits<double>::infinity()};
  Eigen::VectorXd a(3);
  for (int i = 0; i <= steps; ++i)
    for (int j = 0; i + j <= steps; ++j) {
      a << static_cast<double>(i) / steps, static_cast<double>(j) / steps, static_cast<double>(steps - i - j) / steps;
      const double f = (y - e * a).squaredNorm();
      if (f < best.objective) best = {a, f};
    }
  return best;
}

}  // namespace

TEST(SimplexProject, FixedPoints) {
  EXPECT_TRUE(simplex_project(vec({0.2, 0.3, 0.5})).isApprox(vec({0.2, 0.3, 0.5}), 1e-15));
  EXPECT_EQ(simplex_project(vec({1, 0, 0})), vec({1, 0, 0}));
  EXPECT_TRUE(simplex_project(vec({0.6, 0.6, 0.6})).isApprox(vec({1.0 / 3, 1.0 / 3, 1.0 / 3}), 1e-15));
}

TEST(SimplexProject, IdempotentAndNonExpansive) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index p = 2 + static_cast<Eigen::Index>(rng() % 6);
    Eigen::VectorXd u(p), v(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      u(i) = n(rng);
      v(i) = n(rng);
    }
    const Eigen::VectorXd pu = simplex_project(u), pv = simplex_project(v);
    EXPECT_NEAR(pu.sum(), 1.0, 1e-12);
    EXPECT_GE(pu.minCoeff(), 0.0);
    EXPECT_LT((simplex_project(pu) - pu).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((pu - pv).norm(), (u - v).norm() + 1e-12);
  }
}

TEST(Fcls, PurePixelGivesOneHot) {
  Eigen::MatrixXd e(4, 3);
  e << 0.1, 0.9, 0.4, 0.3, 0.2, 0.8, 0.7, 0.5, 0.1, 0.2, 0.6, 0.9;
  for (Eigen::Index k = 0; k < 3; ++k) {
    const Eigen::VectorXd a = fcls_solve(e.col(k), e);
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(3);
    expect(k) = 1.0;
    EXPECT_LT((a - expect).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Fcls, ExactMixtureWithOrthogonalColumns) {
  const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::VectorXd a = fcls_solve(vec({0.5, 0.5, 0.0}), e);
  EXPECT_LT((a - vec({0.5, 0.5, 0.0})).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fcls, RankDeficientIsRejected) {
  Eigen::MatrixXd e(3, 2);
  e << 0.1, 0.2, 0.3, 0.6, 0.2, 0.4;
  EXPECT_THROW(fcls_solve(vec({0.1, 0.2, 0.3}), e), NumericalError);
}

TEST(Fcls, MatchesSimplexGridOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd e(6, 3);
    Eigen::VectorXd y(6);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < 6; ++i) y(i) = u(rng);
    const Eigen::VectorXd a = fcls_solve(y, e);
    const auto oracle = grid_oracle(y, e, 1000);
    EXPECT_LE((y - e * a).squaredNorm(), oracle.objective + 1e-15);
    EXPECT_LT((a - oracle.a).cwiseAbs().maxCoeff(), 2e-3);
    EXPECT_LT(fcls_kkt_residual(y, e, a), 1e-8);
    EXPECT_NEAR(a.sum(), 1.0, 1e-9);
    EXPECT_GE(a.minCoeff(), 0.0);
  }
}

TEST(Fcls, KktHoldsForLargerRandomProblems) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index p = 2 + static_cast<Eigen::Index>(rng() % 7);
    const Eigen::Index c = p + static_cast<Eigen::Index>(rng() % 20);
    Eigen::MatrixXd e(c, p);
    Eigen::VectorXd y(c);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < c; ++i) y(i) = 2.0 * u(rng) - 0.5;
    const Eigen::VectorXd a = fcls_solve(y, e);
    EXPECT_LT(fcls_kkt_residual(y, e, a), 1e-8);
    EXPECT_NEAR(a.sum(), 1.0, 1e-9);
    EXPECT_GE(a.minCoeff(), 0.0);
  }
}

namespace {

HyperCube one_hot_scene() {
  // Three one-hot spectra plus interior mixtures.
  const int n = 12;
  Eigen::MatrixXd y(3, n);
  y.leftCols(3) = Eigen::MatrixXd::Identity(3, 3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int s = 3; s < n; ++s) {
    Eigen::Vector3d a(u(rng), u(rng), u(rng));
    y.col(s) = a / a.sum();
  }
  // Shuffle columns so picks are not simply the first three.
  Eigen::MatrixXd shuffled(3, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int s = 0; s < n; ++s) shuffled.col(s) = y.col(order[static_cast<std::size_t>(s)]);
  return HyperCube::from_matrix(shuffled, 3, 4);
}

}  // namespace

TEST(GeometricInit, RecoversOneHotSpectra) {
  const auto cube = one_hot_scene();
  const Eigen::MatrixXd y = cube.matrix();

  // Brute-force: the pixel triple spanning the largest volume.
  double best_vol = -1.0;
  std::set<std::size_t> best;
  for (Eigen::Index i = 0; i < y.cols(); ++i)
    for (Eigen::Index j = i + 1; j < y.cols(); ++j)
      for (Eigen::Index k = j + 1; k < y.cols(); ++k) {
        Eigen::Matrix3d m;
        m << y.col(i), y.col(j), y.col(k);
        const double vol = std::abs(m.determinant());
        if (vol > best_vol + 1e-12) {
          best_vol = vol;
          best = {static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k)};
        }
      }

  const auto init = geometric_endmember_init(cube, 3);
  EXPECT_EQ(std::set<std::size_t>(init.pixel_indices.begin(), init.pixel_indices.end()), best);
  std::set<Eigen::Index> hot;
  for (Eigen::Index j = 0; j < 3; ++j) {
    Eigen::Index arg;
    EXPECT_NEAR(init.endmembers.signatures().col(j).maxCoeff(&arg), 1.0, 1e-7);
    EXPECT_NEAR(init.endmembers.signatures().col(j).sum(), 1.0, 1e-7);
    hot.insert(arg);
  }
  EXPECT_EQ(hot.size(), 3u);
}

TEST(GeometricInit, SinglePickIsMaxNormPixel) {
  const HyperCube cube(1, 3, 2, {0.1f, 0.9f, 0.5f, 0.2f, 0.3f, 0.6f});
  const auto init = geometric_endmember_init(cube, 1);
  EXPECT_EQ(init.pixel_indices, std::vector<std::size_t>{1});
}

TEST(GeometricInit, IdenticalPixelsAreRankDeficient) {
  const HyperCube cube(2, 2, 3, std::vector<float>(12, 0.4f));
  try {
    geometric_endmember_init(cube, 2);
    FAIL() << "expected rank error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("rank 1"), std::string::npos);
  }
}
