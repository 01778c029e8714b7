#pragma once

#include "msvt/types.hpp"
#include "msvt/voxel_hash.hpp"

#include <string>

namespace msvt {

enum class PointFormat { kitti_bin, csv };

// kitti_bin: flat little-endian float32 records (x, y, z, intensity).
// csv: RFC-4180 with a header row "x,y,z[,feat...]".
// Throws std::runtime_error on truncated binaries or non-numeric cells
// (the message names the offending row).
PointCloud load_points(const std::string& path, PointFormat format);

// Retains points with min <= p < max componentwise (half-open upper bound so
// boundary points always voxelize in-range). Order preserved.
PointCloud crop_points(const PointCloud& cloud, const CropRange& range);

// Bins points at floor((p - origin) / voxel_size) and builds the hashed grid.
// Per-voxel feature: mean of member point features in channels [0, F),
// zeros up to C-1, member point count in the last channel. Requires
// feature_dim >= F + 1. A point outside the extent raises std::out_of_range
// naming the point index.
SparseVoxelGrid voxelize(const PointCloud& cloud, const VoxelizationSpec& spec,
                         int feature_dim, int32_t batch = 0);

// Presets from the standard outdoor-detection configurations.
VoxelizationSpec waymo_spec();
CropRange waymo_range();
VoxelizationSpec kitti_spec();
CropRange kitti_range();

// Derives the voxel-count extent that covers [range.min, range.max) at the
// given voxel size (ranges that divide evenly stay exact).
VoxelizationSpec make_spec(const CropRange& range, const Eigen::Vector3d& voxel_size);

}  // namespace msvt
