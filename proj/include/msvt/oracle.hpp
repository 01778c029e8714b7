#pragma once

#include "msvt/attention.hpp"
#include "msvt/types.hpp"
#include "msvt/voxel_hash.hpp"

#include <span>
#include <vector>

// Dense, obviously-correct reference implementations used as test oracles.
// Everything here recomputes from first principles with plain loops and
// float64; nothing calls into the sparse production paths. Single-threaded,
// capped at extents <= 64^3 and 5000 voxels.
namespace msvt::oracle {

struct DenseGrid {
    Extent extent;
    int32_t batch = 0;
    int channels = 0;
    std::vector<int32_t> cell_index;   // extent-volume array, -1 where empty
    std::vector<VoxelCoord> coords;    // sparse rows, original order
    MatrixF features;

    int64_t cell(int32_t x, int32_t y, int32_t z) const {
        return (int64_t(x) * extent.y + y) * extent.z + z;
    }
};

DenseGrid dense_from_sparse(const SparseVoxelGrid& grid);
// Lossless inverse: coords/features in the original row order.
SparseVoxelGrid dense_to_sparse(const DenseGrid& dense);

// Triple-loop scan of the window box; hits in ascending (x, y, z) order
// (equivalently ascending flattened key), truncated to cap.
std::vector<int32_t> dense_window_gather(const DenseGrid& dense, const Eigen::Vector3d& center,
                                         const WindowSpec& r,
                                         int64_t cap = std::numeric_limits<int64_t>::max());

// Farthest point sampling with min-distances recomputed from scratch each
// step; same seed (lexicographically smallest coord) and tie (smaller index)
// rules as the fast path.
std::vector<int32_t> dense_fps(std::span<const std::array<int32_t, 3>> coords, int k);

// Single-head attention with explicit loops, float64, max-subtracted softmax.
MatrixD dense_attention(const MatrixD& q, const MatrixD& k, const MatrixD& v,
                        const MatrixD& bias_q, const MatrixD& bias_k, double scale);

// Loop-based relative-position table index (the Eq.-level definition).
std::vector<std::vector<int32_t>> dense_relative_index(
    std::span<const std::array<int32_t, 3>> query_coords,
    std::span<const std::array<int32_t, 3>> key_coords, const std::array<int32_t, 3>& r_max);

// Bias via the full A*T product followed by an explicit gather.
MatrixD dense_rpe_bias(const MatrixD& a, const MatrixD& table,
                       const std::vector<std::vector<int32_t>>& index, bool key_side);

// Straight-line reference of one whole block with chessboard sampling off and
// sampling caps unbounded: every voxel is a query, keys are all window hits in
// FPS selection order. Returns the updated feature matrix in sparse row order.
MatrixF dense_block_reference(const DenseGrid& dense, const WindowSpec& query_window,
                              std::span<const WindowSpec> key_windows,
                              std::span<const int> heads_per_group, const BlockWeights& w);

}  // namespace msvt::oracle
