#pragma once

#include "msvt/center_voting.hpp"
#include "msvt/types.hpp"

#include <cstdint>

namespace msvt {

// Seeded synthetic-scene parameters: surface-sampled boxes (LiDAR returns sit
// on object surfaces) over a noisy ground plane.
struct SceneParams {
    CropRange range{{-40.0, -40.0, -2.0}, {40.0, 40.0, 4.0}};
    int num_boxes = 12;
    Eigen::Vector3d box_size_min{1.6, 1.6, 1.4};
    Eigen::Vector3d box_size_max{5.0, 2.6, 2.2};
    int points_per_box = 400;
    int ground_points = 20000;
    double ground_z = 0.0;
    double ground_noise = 0.05;
    double min_center_gap = 8.0;  // meters between box centers
    uint64_t seed = 7;
};

struct SyntheticScene {
    PointCloud cloud;
    std::vector<GtBox> boxes;
};

// Deterministic for a fixed parameter set. Box centers are nudged off voxel
// boundaries of `voxel_hint` so center-voxel membership is numerically
// unambiguous in tests.
SyntheticScene generate_scene(const SceneParams& params,
                              const Eigen::Vector3d& voxel_hint = {0.4, 0.4, 0.6});

}  // namespace msvt
