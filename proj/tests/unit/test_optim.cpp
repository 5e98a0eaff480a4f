#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hypersynth/nn/optim.hpp"

using namespace hypersynth;
using namespace hypersynth::nn;

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  std::vector<double> theta{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 1e-3};
  AdamState<double> st(3);
  AdamHyper h;
  h.lr = 1e-3;
  std::vector<double> before;
  for (int i = 0; i < 1000; ++i) {
    before = theta;
    adam_step<double>(theta, g, st, h);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const double step = std::abs(theta[k] - before[k]);
    EXPECT_NEAR(step, h.lr, 0.01 * h.lr) << k;
    EXPECT_EQ(std::signbit(theta[k] - before[k]), !std::signbit(g[k]));
  }
  EXPECT_EQ(st.step, 1000u);
}

TEST(Adam, FirstTwoStepsMatchHandEvaluation) {
  std::vector<double> theta{0.7};
  AdamState<double> st(1);
  const AdamHyper h{0.01, 0.8, 0.95, 1e-8};
  adam_step<double>(theta, std::vector<double>{2.0}, st, h);
  // m1 = 0.4, v1 = 0.2; corrected: 2, 4 -> step lr * 2 / (2 + eps)
  EXPECT_NEAR(theta[0], 0.7 - 0.01 * 2.0 / (2.0 + 1e-8), 1e-15);
  adam_step<double>(theta, std::vector<double>{-1.0}, st, h);
  const long double m2 = 0.8L * 0.4L + 0.2L * -1.0L, v2 = 0.95L * 0.2L + 0.05L * 1.0L;
  const long double mh = m2 / (1 - 0.64L), vh = v2 / (1 - 0.9025L);
  const long double expect = 0.7L - 0.01L * 2.0L / (2.0L + 1e-8L) - 0.01L * mh / (std::sqrt(vh) + 1e-8L);
  EXPECT_NEAR(theta[0], static_cast<double>(expect), 1e-14);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<float> theta{1.5f, -0.25f};
  AdamState<float> st(2);
  adam_step<float>(theta, std::vector<float>{0.0f, 0.0f}, st, AdamHyper{});
  EXPECT_EQ(theta, (std::vector<float>{1.5f, -0.25f}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n;
    std::vector<float> theta(50, 0.1f), g(50);
    AdamState<float> st(50);
    for (int i = 0; i < 200; ++i) {
      for (auto& v : g) v = n(rng);
      adam_step<float>(theta, g, st, AdamHyper{});
    }
    return theta;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, NonFiniteGradientNamesTensorAndChangesNothing) {
  ParamLayout layout;
  layout.add("enc/weight", {2, 2});
  layout.add("enc/bias", {2});
  std::vector<double> theta(6, 1.0);
  std::vector<double> g(6, 0.5);
  g[5] = std::nan("");
  AdamState<double> st(6);
  try {
    adam_step<double>(theta, g, st, AdamHyper{}, &layout);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("enc/bias"), std::string::npos);
  }
  EXPECT_EQ(theta, std::vector<double>(6, 1.0));
  EXPECT_EQ(st.step, 0u);
}

TEST(Adam, SizeMismatch) {
  std::vector<double> theta(3), g(2);
  AdamState<double> st(3);
  EXPECT_THROW(adam_step<double>(theta, g, st, AdamHyper{}), ConfigError);
}

TEST(Ema, DecayZeroAndOne) {
  std::vector<float> ema{1.0f, 2.0f};
  const std::vector<float> w{5.0f, -1.0f};
  ema_update<float>(ema, w, 1.0);
  EXPECT_EQ(ema, (std::vector<float>{1.0f, 2.0f}));
  ema_update<float>(ema, w, 0.0);
  EXPECT_EQ(ema, w);
}

TEST(Ema, GapShrinksGeometrically) {
  std::vector<double> ema{0.0};
  const std::vector<double> w{1.0};
  const double decay = 0.9999;
  for (int n = 1; n <= 5000; ++n) {
    ema_update<double>(ema, w, decay);
    if (n % 1000 == 0) EXPECT_NEAR(1.0 - ema[0], std::pow(decay, n), 1e-12);
  }
}

TEST(Ema, ElementwiseAlgebraAtSinglePrecision) {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n;
  std::vector<float> ema(100), w(100);
  for (auto& v : ema) v = n(rng);
  const double decay = 0.999;
  for (int step = 0; step < 50; ++step) {
    for (auto& v : w) v = n(rng);
    const auto prev = ema;
    ema_update<float>(ema, w, decay);
    for (std::size_t i = 0; i < ema.size(); ++i)
      ASSERT_NEAR(ema[i], decay * prev[i] + (1.0 - decay) * w[i], 1e-7 * std::max(1.0, std::abs(static_cast<double>(prev[i]))));
  }
}

TEST(ParamLayoutTest, OffsetsAndOwners) {
  ParamLayout l;
  EXPECT_EQ(l.add("a", {2, 3}), 0u);
  EXPECT_EQ(l.add("b", {4}), 6u);
  EXPECT_EQ(l.total(), 10u);
  EXPECT_EQ(l.owner(7), "b");
  EXPECT_EQ(l.find("a").size, 6u);
  EXPECT_THROW(l.find("c"), ConfigError);
}
