#pragma once

#include "hypersynth/core/hsi.hpp"
#include "hypersynth/eval/scene.hpp"

namespace hypersynth::test_support {

// Oracle scene normalized per band, with the ground-truth endmembers mapped
// through the same per-band scaling so recovery can be scored in the space
// the unmixers see.
struct NormalizedScene {
  HyperCube cube;
  EndmemberMatrix truth_endmembers;
  AbundanceStack truth_abundances;
};

inline NormalizedScene normalized_scene(const eval::SceneSpec& spec) {
  auto scene = eval::generate_scene(spec);
  auto [cube, scaling] = normalize_cube_with_scaling(scene.cube);
  Eigen::MatrixXd e = scaling.apply(scene.endmembers.signatures()).cwiseMax(0.0).cwiseMin(1.0);
  return {std::move(cube), EndmemberMatrix(std::move(e)), std::move(scene.abundances)};
}

}  // namespace hypersynth::test_support
