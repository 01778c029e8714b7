#pragma once

#include "msvt/attention.hpp"
#include "msvt/center_voting.hpp"
#include "msvt/config.hpp"
#include "msvt/voxel_hash.hpp"

#include <vector>

namespace msvt {

// Full parameter set: one BlockWeights per regular block, one for the pillar
// compression block, one for the vote-context pass, plus the vote MLPs.
struct ModelWeights {
    std::vector<BlockWeights> blocks;
    BlockWeights pillar;
    BlockWeights context;
    VoteModuleWeights vote;
};

// Deterministic for a fixed (cfg, seed): seeded Xavier-uniform projections
// and FFN, zero position tables, LN at identity.
ModelWeights init_weights(const PipelineConfig& cfg, uint64_t seed);

// Work counters for the bench harness. Totals are exact and independent of
// the thread schedule.
struct ForwardStats {
    uint64_t attention_queries = 0;            // rows that went through attention
    uint64_t interpolated_queries = 0;         // rows filled by KNN interpolation
    std::vector<uint64_t> keys_per_scale;      // sampled keys, per key-window scale
    uint64_t windows = 0;                      // non-empty query windows processed
    uint64_t passthrough_windows = 0;          // windows whose sampled set was empty
};

// One block: chessboard-sample the queries of each window, balanced
// multi-window sample the keys, update sampled queries via attention + FFN,
// interpolate the unsampled ones from the *updated* sampled features.
// Coords never change; only features are replaced.
SparseVoxelGrid mssvt_block_forward(const SparseVoxelGrid& grid, int block_index,
                                    const PipelineConfig& cfg, const BlockWeights& w,
                                    ForwardStats* stats = nullptr);

// Stacks cfg.num_blocks blocks with block_index t = 0..N-1 feeding the
// chessboard cycle.
SparseVoxelGrid backbone_forward(const SparseVoxelGrid& grid, const PipelineConfig& cfg,
                                 const ModelWeights& weights, ForwardStats* stats = nullptr);

}  // namespace msvt
