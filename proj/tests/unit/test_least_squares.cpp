#include <gtest/gtest.h>

#include "hypersynth/eval/matching.hpp"
#include "hypersynth/eval/report.hpp"
#include "hypersynth/eval/scene.hpp"
#include "hypersynth/unmix/least_squares.hpp"
#include "support/oracle_scene.hpp"

using namespace hypersynth;
using namespace hypersynth::unmix;

namespace {

eval::SceneSpec small_spec(double snr_db) {
  eval::SceneSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.bands = 24;
  spec.p = 3;
  spec.snr_db = snr_db;
  spec.seed = 5;
  return spec;
}

}  // namespace

TEST(AlternatingMinimize, ZeroIterationsReturnsInitialization) {
  const auto scene = test_support::normalized_scene(small_spec(40.0));
  LsConfig cfg;
  cfg.max_outer_iters = 0;
  const auto res = alternating_minimize(scene.cube, cfg);
  EXPECT_EQ(res.objective_trace.size(), 1u);
  EXPECT_EQ(res.endmembers, geometric_endmember_init(scene.cube, 3).endmembers);
  EXPECT_EQ(res.method, Method::LS);
  EXPECT_TRUE(res.abundances.strict_simplex());
}

TEST(AlternatingMinimize, FixedTruthConvergesToFcls) {
  const auto scene = test_support::normalized_scene(small_spec(std::numeric_limits<double>::infinity()));
  LsConfig cfg;
  cfg.xi = 0.0;
  cfg.gamma = 0.0;
  cfg.max_outer_iters = 1;
  cfg.inner_iters = 3000;
  cfg.initial_endmembers = scene.truth_endmembers;
  cfg.update_endmembers = false;
  cfg.abundance_init = AbundanceInit::Uniform;
  const auto res = alternating_minimize(scene.cube, cfg);

  const FclsSolver solver(scene.truth_endmembers.signatures());
  const Eigen::MatrixXd y = scene.cube.matrix();
  const Eigen::MatrixXd a = res.abundances.matrix();
  double worst = 0.0;
  for (Eigen::Index s = 0; s < y.cols(); ++s)
    worst = std::max(worst, (solver.solve(y.col(s)) - a.col(s)).cwiseAbs().maxCoeff());
  EXPECT_LT(worst, 1e-3);
}

TEST(AlternatingMinimize, NoiselessRecoveryAndMonotoneTrace) {
  const auto scene = test_support::normalized_scene(small_spec(std::numeric_limits<double>::infinity()));
  LsConfig cfg;
  const auto res = alternating_minimize(scene.cube, cfg);
  for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
    EXPECT_LE(res.objective_trace[i], res.objective_trace[i - 1] + 1e-9);
  const auto m = eval::match_endmembers(res.endmembers, scene.truth_endmembers);
  for (double s : m.sad_deg) EXPECT_LT(s, 2.0);
}

TEST(AlternatingMinimize, RejectsUnnormalizedCube) {
  const HyperCube cube(2, 2, 3, std::vector<float>(12, 2.0f));
  EXPECT_THROW(alternating_minimize(cube, LsConfig{}), ConfigError);
}

TEST(AlternatingMinimize, RejectsInvalidConfig) {
  const auto scene = test_support::normalized_scene(small_spec(40.0));
  LsConfig cfg;
  cfg.endmember_count = 1;
  EXPECT_THROW(alternating_minimize(scene.cube, cfg), ConfigError);
  cfg = LsConfig{};
  cfg.tol = 0.0;
  EXPECT_THROW(alternating_minimize(scene.cube, cfg), ConfigError);
}
