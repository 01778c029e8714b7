#pragma once

#include "msvt/types.hpp"
#include "msvt/voxel_hash.hpp"

#include <vector>

namespace msvt {

// Deduplicated query-window centers plus the member voxels of each window.
// Every non-empty voxel appears in exactly one window's member list.
struct WindowSet {
    std::vector<Eigen::Vector3d> centers;          // (floor(x/r0) + 0.5) * r0, may be half-integral
    std::vector<std::array<int32_t, 3>> cells;     // floor(x/r0) triple per window
    std::vector<std::vector<int32_t>> members;     // voxel indices, ascending

    int64_t size() const { return static_cast<int64_t>(centers.size()); }
};

// Partitions the grid into non-overlapping windows of size r0 and keeps the
// non-empty ones, ordered by ascending cell key. Member lists are ascending
// voxel indices.
WindowSet partition_query_windows(const SparseVoxelGrid& grid, const WindowSpec& r0);

// Probes the r.x * r.y * r.z candidate coords of the window of size r centered
// at `center` (a partition center) and returns the non-empty voxel indices in
// ascending flattened-key order, truncated to `cap` hits.
std::vector<int32_t> gather_window_voxels(const SparseVoxelGrid& grid,
                                          const Eigen::Vector3d& center, const WindowSpec& r,
                                          int64_t cap);

// Same contract via a bounds-filtering linear scan over all voxels instead of
// hash probes (the bench's dense lane; results are identical).
std::vector<int32_t> gather_window_voxels_scan(const SparseVoxelGrid& grid,
                                               const Eigen::Vector3d& center, const WindowSpec& r,
                                               int64_t cap);

// Smallest integer coordinate covered by a window of size r centered at c
// (per axis). For odd r this is exact; for even r the box covers
// [c - r/2, c + r/2) in voxel units.
std::array<int32_t, 3> window_low_corner(const Eigen::Vector3d& center, const WindowSpec& r);

}  // namespace msvt
