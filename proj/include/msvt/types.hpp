#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <vector>

namespace msvt {

// Feature rows are stored row-major so a voxel's channels are contiguous
// (serialization and per-row gathers depend on this).
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixI = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorF = Eigen::VectorXf;
using VectorD = Eigen::VectorXd;

// Voxel counts per axis of the discretized space (x_max, y_max, z_max).
struct Extent {
    int32_t x = 0;
    int32_t y = 0;
    int32_t z = 0;

    int64_t volume() const { return int64_t(x) * int64_t(y) * int64_t(z); }
    bool contains(int32_t cx, int32_t cy, int32_t cz) const {
        return cx >= 0 && cx < x && cy >= 0 && cy < y && cz >= 0 && cz < z;
    }
    bool operator==(const Extent&) const = default;
};

// Integer voxel coordinate plus batch index.
struct VoxelCoord {
    int32_t b = 0;
    int32_t x = 0;
    int32_t y = 0;
    int32_t z = 0;

    bool operator==(const VoxelCoord&) const = default;
    std::array<int32_t, 3> xyz() const { return {x, y, z}; }
};

struct PointCloud {
    std::vector<Eigen::Vector3f> xyz;
    MatrixF feats;  // one row per point, F channels (F may be 0)

    int64_t size() const { return static_cast<int64_t>(xyz.size()); }
    int feature_dim() const { return static_cast<int>(feats.cols()); }
};

// Metric geometry is double precision: the preset voxel sizes (0.32, 0.4)
// are not float32-exact and extent arithmetic must divide them cleanly.
struct CropRange {
    Eigen::Vector3d min;
    Eigen::Vector3d max;
};

struct VoxelizationSpec {
    Eigen::Vector3d voxel_size{0.4, 0.4, 0.6};
    Eigen::Vector3d origin{-75.2, -75.2, -2.0};
    Extent extent{376, 376, 10};
};

// Window size in voxels per axis. The pillar case encodes r_z = extent_z.
struct WindowSpec {
    std::array<int32_t, 3> size{1, 1, 1};

    bool operator==(const WindowSpec&) const = default;
};

}  // namespace msvt
