#pragma once

#include "msvt/types.hpp"
#include "msvt/voxel_hash.hpp"
#include "msvt/windowing.hpp"

#include <span>
#include <utility>
#include <vector>

namespace msvt {

enum class CbsRate { off, half, quarter, eighth };

// Periodic symbol labeling of voxel coordinates. |axes| must be
// log2(period): one axis at 1/2, two at 1/4, three at 1/8.
struct ChessboardSpec {
    CbsRate rate = CbsRate::quarter;
    std::array<bool, 3> axes{true, true, false};  // x, y, z

    int period() const;
    void validate() const;

    static ChessboardSpec with_rate(CbsRate rate);  // default axes per rate
};

// Symbol id in [0, period): parity bits of the listed axes, x highest.
// Rate 1/4 on {x,y}: (x mod 2)*2 + (y mod 2).
int chessboard_symbol(const VoxelCoord& c, const ChessboardSpec& spec);

// Splits one query window's members: sampled carries the voxels whose symbol
// equals block_index mod period, unsampled the rest. Both keep member order.
std::pair<std::vector<int32_t>, std::vector<int32_t>>
sample_queries_cbs(std::span<const int32_t> members, const std::vector<VoxelCoord>& coords,
                   int block_index, const ChessboardSpec& spec);

// Deterministic farthest point sampling. Seeds at the lexicographically
// smallest coordinate, then greedily takes the point with the largest minimum
// squared distance to the chosen set; ties go to the smaller input index.
// Returns min(k, n) indices in selection order.
std::vector<int32_t> farthest_point_sample(std::span<const std::array<int32_t, 3>> coords, int k);

// Keys for one query center: per scale, up to n_pool gathered hits reduced by
// FPS to at most n_keys.
struct KeySampleSet {
    struct Scale {
        std::vector<int32_t> grid_indices;          // into grid.coords(), FPS order
        std::vector<std::array<int32_t, 3>> coords;
        MatrixF features;
    };
    std::vector<Scale> scales;
};

KeySampleSet balanced_multiwindow_sample(const SparseVoxelGrid& grid,
                                         const Eigen::Vector3d& center,
                                         std::span<const WindowSpec> key_windows,
                                         int64_t n_pool, int64_t n_keys,
                                         bool linear_scan_gather = false);

// Inverse-distance interpolation from the K' = min(k, #sampled) nearest
// sampled voxels (Euclidean on voxel coords, ties by smaller index);
// weights 1/(d + 1e-8). With no sampled voxels the input features pass
// through unchanged and `interpolated` is false.
struct InterpolationResult {
    MatrixF features;
    bool interpolated = false;
};

InterpolationResult knn_interpolate(std::span<const std::array<int32_t, 3>> unsampled_coords,
                                    const MatrixF& unsampled_feats,
                                    std::span<const std::array<int32_t, 3>> sampled_coords,
                                    const MatrixF& sampled_feats, int k);

}  // namespace msvt
