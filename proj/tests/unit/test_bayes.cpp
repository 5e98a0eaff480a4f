#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "hypersynth/eval/scene.hpp"
#include "hypersynth/unmix/bayes.hpp"
#include "support/oracle_scene.hpp"

using namespace hypersynth;
using namespace hypersynth::unmix;

namespace {

Eigen::MatrixXd random_simplex_columns(Eigen::Index p, Eigen::Index n, std::mt19937_64& rng) {
  std::exponential_distribution<double> ex(1.0);
  Eigen::MatrixXd a(p, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index k = 0; k < p; ++k) a(k, s) = ex(rng);
    a.col(s) /= a.col(s).sum();
  }
  return a;
}

eval::SceneSpec small_spec(double snr_db) {
  eval::SceneSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.bands = 24;
  spec.snr_db = snr_db;
  spec.seed = 3;
  return spec;
}

}  // namespace

TEST(NegLogPosterior, ExactFitUniformPriorIsZero) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd e = (Eigen::MatrixXd::Random(6, 3).array() * 0.5 + 0.5).matrix();
  const Eigen::MatrixXd a = random_simplex_columns(3, 10, rng);
  EXPECT_DOUBLE_EQ(neg_log_posterior(e * a, e, a, 0.01, 1.0), 0.0);
}

TEST(NegLogPosterior, QuadraticInResidual) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd e = (Eigen::MatrixXd::Random(6, 3).array() * 0.5 + 0.5).matrix();
  const Eigen::MatrixXd a = random_simplex_columns(3, 10, rng);
  const Eigen::MatrixXd r = Eigen::MatrixXd::Random(6, 10) * 0.1;
  const double one = neg_log_posterior(e * a + r, e, a, 0.05, 1.0);
  const double two = neg_log_posterior(e * a + 2.0 * r, e, a, 0.05, 1.0);
  EXPECT_NEAR(two, 4.0 * one, 1e-9 * two);
}

TEST(NegLogPosterior, MatchesExtendedPrecision) {
  using Big = boost::multiprecision::cpp_bin_float_50;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd e(8, 4), y(8, 12);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = u(rng);
  const Eigen::MatrixXd a = random_simplex_columns(4, 12, rng);
  const double sigma = 0.07, alpha = 0.6;

  Big lik = 0, prior = 0;
  for (Eigen::Index c = 0; c < y.rows(); ++c)
    for (Eigen::Index s = 0; s < y.cols(); ++s) {
      Big fit = 0;
      for (Eigen::Index k = 0; k < 4; ++k) fit += Big(e(c, k)) * Big(a(k, s));
      const Big d = Big(y(c, s)) - fit;
      lik += d * d;
    }
  for (Eigen::Index i = 0; i < a.size(); ++i) prior += (Big(alpha) - 1) * log(Big(a.data()[i]));
  const Big expected = lik / (2 * Big(sigma) * Big(sigma)) - prior;
  const double got = neg_log_posterior(y, e, a, sigma, alpha);
  EXPECT_NEAR(got, expected.convert_to<double>(), 1e-11 * std::abs(got));
}

TEST(NegLogPosterior, RejectsOffSimplex) {
  const Eigen::MatrixXd e = Eigen::MatrixXd::Constant(3, 2, 0.5);
  Eigen::MatrixXd a(2, 1);
  a << 0.7, 0.7;
  EXPECT_THROW(neg_log_posterior(e * a, e, a, 0.1, 1.0), ConfigError);
  a << 1.2, -0.2;
  EXPECT_THROW(neg_log_posterior(e * a, e, a, 0.1, 1.0), ConfigError);
}

TEST(GibbsUnmix, FixedTruthMatchesFcls) {
  const auto scene = test_support::normalized_scene(small_spec(std::numeric_limits<double>::infinity()));
  StConfig cfg;
  cfg.initial_endmembers = scene.truth_endmembers;
  cfg.update_endmembers = false;
  cfg.n_samples = 800;
  cfg.burn_in = 400;
  const auto res = gibbs_unmix(scene.cube, cfg);
  EXPECT_EQ(res.endmembers, scene.truth_endmembers);
  const FclsSolver solver(scene.truth_endmembers.signatures());
  const Eigen::MatrixXd y = scene.cube.matrix();
  const Eigen::MatrixXd est = res.abundances.matrix();
  double worst = 0.0;
  for (Eigen::Index s = 0; s < y.cols(); ++s)
    worst = std::max(worst, (est.col(s) - solver.solve(y.col(s))).cwiseAbs().maxCoeff());
  EXPECT_LT(worst, 0.02);
}

TEST(GibbsUnmix, SingleKeptSampleIsTheResult) {
  const auto scene = test_support::normalized_scene(small_spec(30.0));
  StConfig cfg;
  cfg.n_samples = 41;
  cfg.burn_in = 40;
  Eigen::MatrixXd kept_e, kept_a;
  std::size_t calls = 0;
  const auto res = gibbs_unmix(scene.cube, cfg, [&](const StSampleView& v) {
    kept_e = v.endmembers;
    kept_a = v.abundances;
    ++calls;
  });
  EXPECT_EQ(calls, 1u);
  EXPECT_EQ(res.objective_trace.size(), 1u);
  EXPECT_LT((res.endmembers.signatures() - kept_e).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((res.abundances.matrix() - kept_a).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(GibbsUnmix, KeptSamplesOnSimplexAndAcceptRuleHolds) {
  const auto scene = test_support::normalized_scene(small_spec(30.0));
  StConfig cfg;
  cfg.n_samples = 120;
  cfg.burn_in = 60;
  cfg.debug_checks = true;
  double worst = 0.0;
  EXPECT_NO_THROW(gibbs_unmix(scene.cube, cfg, [&](const StSampleView& v) {
    worst = std::max(worst, (v.abundances.colwise().sum().array() - 1.0).abs().maxCoeff());
    worst = std::max(worst, -v.abundances.minCoeff());
    EXPECT_GE(v.endmembers.minCoeff(), 0.0);
    EXPECT_LE(v.endmembers.maxCoeff(), 1.0);
  }));
  EXPECT_LT(worst, 1e-9);
}

TEST(GibbsUnmix, ReproducibleAcrossRunsAndThreadCounts) {
  const auto scene = test_support::normalized_scene(small_spec(30.0));
  StConfig cfg;
  cfg.n_samples = 60;
  cfg.burn_in = 30;
  ::setenv("HYPERSYNTH_THREADS", "1", 1);
  const auto a = gibbs_unmix(scene.cube, cfg);
  ::setenv("HYPERSYNTH_THREADS", "3", 1);
  const auto b = gibbs_unmix(scene.cube, cfg);
  ::unsetenv("HYPERSYNTH_THREADS");
  EXPECT_EQ(a.objective_trace, b.objective_trace);
  EXPECT_EQ(a.endmembers, b.endmembers);
  EXPECT_EQ(a.abundances, b.abundances);
  cfg.seed = 9;
  EXPECT_NE(gibbs_unmix(scene.cube, cfg).objective_trace, a.objective_trace);
}

TEST(GibbsUnmix, EstimatedSigmaIsFclsResidualRms) {
  const auto scene = test_support::normalized_scene(small_spec(25.0));
  StConfig cfg;
  cfg.noise_sigma.reset();
  cfg.initial_endmembers = scene.truth_endmembers;
  cfg.n_samples = 30;
  cfg.burn_in = 10;
  StDiagnostics diag;
  gibbs_unmix(scene.cube, cfg, {}, &diag);

  const Eigen::MatrixXd y = scene.cube.matrix();
  const Eigen::MatrixXd& e = scene.truth_endmembers.signatures();
  double sq = 0.0;
  for (Eigen::Index s = 0; s < y.cols(); ++s) {
    Eigen::VectorXd a = fcls_solve(y.col(s), e).cwiseMax(1e-6);
    a /= a.sum();
    sq += (y.col(s) - e * a).squaredNorm();
  }
  EXPECT_NEAR(diag.sigma, std::sqrt(sq / static_cast<double>(y.size())), 1e-9);
}

TEST(GibbsUnmix, MixingFailureReportsRate) {
  const auto scene = test_support::normalized_scene(small_spec(30.0));
  StConfig cfg;
  cfg.noise_sigma = 1e-7;
  cfg.initial_endmembers = scene.truth_endmembers;
  cfg.update_endmembers = false;
  cfg.n_samples = 60;
  cfg.burn_in = 50;
  try {
    gibbs_unmix(scene.cube, cfg);
    FAIL() << "expected a mixing failure";
  } catch (const NumericalError& err) {
    EXPECT_NE(std::string(err.what()).find("acceptance rate"), std::string::npos);
  }
}

TEST(GibbsUnmix, RejectsBadConfig) {
  const auto scene = test_support::normalized_scene(small_spec(30.0));
  StConfig cfg;
  cfg.burn_in = cfg.n_samples;
  EXPECT_THROW(gibbs_unmix(scene.cube, cfg), ConfigError);
  cfg = StConfig{};
  cfg.dirichlet_alpha = 0.0;
  EXPECT_THROW(gibbs_unmix(scene.cube, cfg), ConfigError);
}

TEST(TruncatedNormal, StaysInBoxAndMatchesMoments) {
  std::mt19937_64 rng(5);
  // Untruncated regime: moments of N(0.5, 0.05^2).
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = detail::truncated_normal(0.5, 0.05, 0.0, 1.0, rng);
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.002);
  EXPECT_NEAR(std::sqrt(sq / n - (sum / n) * (sum / n)), 0.05, 0.002);
  // Far tails on both sides stay in range and hug the near bound.
  for (int i = 0; i < 100; ++i) {
    const double lo = detail::truncated_normal(-50.0, 0.01, 0.0, 1.0, rng);
    const double hi = detail::truncated_normal(60.0, 0.01, 0.0, 1.0, rng);
    EXPECT_GE(lo, 0.0);
    EXPECT_LT(lo, 1e-3);
    EXPECT_LE(hi, 1.0);
    EXPECT_GT(hi, 1.0 - 1e-3);
  }
}
