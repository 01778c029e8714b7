#pragma once

#include "msvt/types.hpp"
#include "msvt/voxel_hash.hpp"

#include <span>
#include <vector>

namespace msvt {

// Head-group layout: C channels split across M groups, each group fed keys
// from one window scale and running its own heads over width C/M.
struct HeadGroupConfig {
    int channels = 64;
    std::vector<int> heads_per_group{4, 4};

    int groups() const { return static_cast<int>(heads_per_group.size()); }
    int group_width() const { return channels / groups(); }
    void validate() const;
};

// All learnable parameters of one attention block. Position tables are sized
// by the largest key window r_max: R = prod(2 * r_max_a - 1).
struct BlockWeights {
    MatrixF w_q;                      // C x C
    std::vector<MatrixF> w_k;         // per group, C x (C/M)
    std::vector<MatrixF> w_v;         // per group, C x (C/M)
    std::vector<MatrixF> rpe_table;   // per group, (C/M) x R
    MatrixF ffn_w1;                   // C x C_h
    VectorF ffn_b1;                   // C_h
    MatrixF ffn_w2;                   // C_h x C
    VectorF ffn_b2;                   // C
    VectorF ln_gamma;                 // C
    VectorF ln_beta;                  // C
    std::array<int32_t, 3> r_max{7, 7, 7};

    int64_t rpe_entries() const;      // R
};

int64_t rpe_table_entries(const std::array<int32_t, 3>& r_max);

struct ProjectedQkv {
    MatrixF q;                 // N_q x C
    std::vector<MatrixF> k;    // per scale, N_k x (C/M)
    std::vector<MatrixF> v;    // per scale, N_k x (C/M)
};

// Q = F0 * W_Q; K_m = F_m * W_K_m; V_m = F_m * W_V_m. 64-bit accumulation,
// 32-bit results. Throws std::invalid_argument on shape mismatch.
ProjectedQkv project_qkv(const MatrixF& f0, std::span<const MatrixF> fm, const BlockWeights& w);

// Table index per (query, key) pair: with D_a = 2*r_max_a - 1 and offset
// o_a = r_max_a - 1, I = (dx+o_x)*D_y*D_z + (dy+o_y)*D_z + (dz+o_z) where
// d = key - query. A delta outside [-(r_max-1), r_max-1] throws
// std::out_of_range (it indicates a windowing bug).
MatrixI relative_position_index(std::span<const std::array<int32_t, 3>> query_coords,
                                std::span<const std::array<int32_t, 3>> key_coords,
                                const std::array<int32_t, 3>& r_max);

enum class RpeSide { query, key };

// Positional bias B[q,k] = (A * T)[row, I[q,k]] with row = q on the query
// side (A = Q_m) and row = k on the key side (A = K_m).
MatrixF rpe_bias(const MatrixF& a, const MatrixF& table, const MatrixI& index, RpeSide side);

// One head group: per head, logits = Q K^T / sqrt(group width) + B_Q + B_K
// (biases shared across the group's heads), row softmax, weights * V; head
// outputs concatenated. Zero keys yield a zero output block. NaN logits throw.
MatrixF scale_aware_attention(const MatrixF& q_group, const MatrixF& k, const MatrixF& v,
                              const MatrixF& bias_q, const MatrixF& bias_k, int heads);

// Concatenates the group outputs and applies Y = MLP(LN(Y~)) + Y~
// (GELU MLP, LN epsilon 1e-5).
MatrixF merge_heads_ffn(std::span<const MatrixF> group_outputs, const BlockWeights& w);

// Sparse BEV feature map produced by pillar compression.
struct BevMap {
    Extent extent;
    std::vector<std::array<int32_t, 2>> cells;  // (x, y), ascending
    MatrixF features;                           // one row per cell
};

// Compresses the grid vertically with (1, 1, extent_z) pillar windows: one
// query per non-empty pillar initialized to the mean of its voxel features,
// keys = the pillar's voxels at every scale, one attention + FFN pass.
BevMap pillar_compress(const SparseVoxelGrid& grid, const BlockWeights& w,
                       const HeadGroupConfig& cfg, int threads = 1);

}  // namespace msvt
