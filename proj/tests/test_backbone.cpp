#include "msvt/backbone.hpp"

#include "msvt/oracle.hpp"
#include "msvt/sampling.hpp"

#include <doctest.h>

#include <random>
#include <set>
#include <unordered_set>

using namespace msvt;

namespace {

PipelineConfig test_config(int channels = 32) {
    PipelineConfig cfg;
    cfg.channels = channels;
    cfg.heads_per_group = {2, 2};
    cfg.threads = 1;
    cfg.voxelization.extent = {32, 32, 8};
    return cfg;
}

SparseVoxelGrid random_grid(uint64_t seed, const Extent& extent, int64_t n, int channels) {
    std::mt19937_64 gen(seed);
    std::unordered_set<int64_t> seen;
    std::vector<VoxelCoord> coords;
    while (static_cast<int64_t>(coords.size()) < n) {
        VoxelCoord c{0, int32_t(gen() % uint64_t(extent.x)), int32_t(gen() % uint64_t(extent.y)),
                     int32_t(gen() % uint64_t(extent.z))};
        if (seen.insert(flatten_key(c, extent)).second) coords.push_back(c);
    }
    MatrixF feats(n, channels);
    for (int64_t i = 0; i < feats.size(); ++i) {
        feats.data()[i] = float(double(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0);
    }
    return build_hash(extent, std::move(coords), std::move(feats));
}

}  // namespace

TEST_CASE("init_weights: deterministic, seed-sensitive, right shapes") {
    const PipelineConfig cfg = test_config();
    const ModelWeights a = init_weights(cfg, 7);
    const ModelWeights b = init_weights(cfg, 7);
    const ModelWeights c = init_weights(cfg, 8);

    REQUIRE(a.blocks.size() == 4);
    CHECK(a.blocks[0].w_q == b.blocks[0].w_q);
    CHECK(a.blocks[3].ffn_w2 == b.blocks[3].ffn_w2);
    CHECK(a.vote.offset_w1 == b.vote.offset_w1);
    CHECK(a.blocks[0].w_q != c.blocks[0].w_q);

    CHECK(a.blocks[0].w_q.rows() == 32);
    CHECK(a.blocks[0].w_k[0].cols() == 16);
    CHECK(a.blocks[0].rpe_table[0].cols() == 13 * 13 * 13);
    CHECK(a.blocks[0].rpe_table[0].isZero(0.0f));
    CHECK(a.pillar.rpe_table[0].cols() == 2 * 8 - 1);  // (1,1,extent_z) table
    CHECK(a.vote.offset_w2.rows() == cfg.vote.hidden);
}

TEST_CASE("block forward: empty grid is unchanged") {
    const PipelineConfig cfg = test_config();
    const ModelWeights w = init_weights(cfg, 1);
    const SparseVoxelGrid empty = build_hash(cfg.voxelization.extent, {}, MatrixF(0, 32));
    const SparseVoxelGrid out = mssvt_block_forward(empty, 0, cfg, w.blocks[0]);
    CHECK(out.size() == 0);
}

TEST_CASE("block forward: coords and shape invariant, off-cycle windows pass through") {
    PipelineConfig cfg = test_config();
    const ModelWeights w = init_weights(cfg, 2);
    const SparseVoxelGrid grid = random_grid(11, cfg.voxelization.extent, 500, cfg.channels);

    ForwardStats stats;
    const SparseVoxelGrid out = mssvt_block_forward(grid, 0, cfg, w.blocks[0], &stats);
    CHECK(out.coords() == grid.coords());
    CHECK(out.features().rows() == grid.features().rows());
    CHECK(out.features().cols() == grid.features().cols());
    CHECK(stats.attention_queries + stats.interpolated_queries +
              0 <= uint64_t(grid.size()));

    // A window whose members all carry an off-cycle symbol keeps its features.
    std::vector<VoxelCoord> coords = {{0, 0, 1, 0}, {0, 2, 1, 2}};  // symbols 1, 1
    MatrixF feats = MatrixF::Constant(2, cfg.channels, 0.5f);
    const SparseVoxelGrid lone = build_hash(cfg.voxelization.extent, coords, feats);
    ForwardStats lone_stats;
    const SparseVoxelGrid kept = mssvt_block_forward(lone, 0, cfg, w.blocks[0], &lone_stats);
    CHECK(kept.features() == feats);
    CHECK(lone_stats.passthrough_windows == lone_stats.windows);
    CHECK(lone_stats.attention_queries == 0);
}

TEST_CASE("block forward with sampling off matches the dense block reference") {
    PipelineConfig cfg = test_config();
    cfg.cbs = ChessboardSpec::with_rate(CbsRate::off);
    cfg.n_pool = int64_t(1) << 40;
    cfg.n_keys = int64_t(1) << 40;

    ModelWeights w = init_weights(cfg, 3);
    std::mt19937_64 gen(44);
    for (auto& table : w.blocks[0].rpe_table) {
        for (int64_t i = 0; i < table.size(); ++i) {
            table.data()[i] = float((double(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * 0.05);
        }
    }

    const SparseVoxelGrid grid = random_grid(13, cfg.voxelization.extent, 900, cfg.channels);
    const SparseVoxelGrid fast = mssvt_block_forward(grid, 0, cfg, w.blocks[0]);
    const MatrixF reference = oracle::dense_block_reference(
        oracle::dense_from_sparse(grid), cfg.query_window, cfg.key_windows, cfg.heads_per_group,
        w.blocks[0]);

    for (int64_t i = 0; i < fast.size(); ++i) {
        for (int c = 0; c < cfg.channels; ++c) {
            const double got = fast.features()(i, c);
            const double want = reference(i, c);
            CHECK(std::abs(got - want) <= 1e-5 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST_CASE("backbone: chessboard cycle covers each symbol once over four blocks") {
    PipelineConfig cfg = test_config();
    const ModelWeights w = init_weights(cfg, 4);
    const SparseVoxelGrid grid = random_grid(15, cfg.voxelization.extent, 600, cfg.channels);

    ForwardStats stats;
    backbone_forward(grid, cfg, w, &stats);
    // Four blocks at rate 1/4: every voxel is attended exactly once in total.
    CHECK(stats.attention_queries == uint64_t(grid.size()));
    CHECK(stats.interpolated_queries == 3 * uint64_t(grid.size()));

    // Eight blocks: each symbol exactly twice.
    PipelineConfig cfg8 = cfg;
    cfg8.num_blocks = 8;
    ModelWeights w8 = init_weights(cfg8, 4);
    ForwardStats stats8;
    backbone_forward(grid, cfg8, w8, &stats8);
    CHECK(stats8.attention_queries == 2 * uint64_t(grid.size()));

    // One block: only the symbol-0 voxels go through attention.
    PipelineConfig cfg1 = cfg;
    cfg1.num_blocks = 1;
    ModelWeights w1 = init_weights(cfg1, 4);
    ForwardStats stats1;
    backbone_forward(grid, cfg1, w1, &stats1);
    uint64_t symbol0 = 0;
    for (const auto& c : grid.coords()) {
        if (chessboard_symbol(c, cfg.cbs) == 0) ++symbol0;
    }
    CHECK(stats1.attention_queries == symbol0);
}

TEST_CASE("backbone: deterministic across runs and thread counts") {
    PipelineConfig cfg = test_config();
    const ModelWeights w = init_weights(cfg, 5);
    const SparseVoxelGrid grid = random_grid(17, cfg.voxelization.extent, 700, cfg.channels);

    const SparseVoxelGrid a = backbone_forward(grid, cfg, w);
    const SparseVoxelGrid b = backbone_forward(grid, cfg, w);
    CHECK(a.features() == b.features());  // bit-identical, threads 1

    PipelineConfig cfg8 = cfg;
    cfg8.threads = 8;
    const SparseVoxelGrid c = backbone_forward(grid, cfg8, w);
    for (int64_t i = 0; i < a.features().size(); ++i) {
        CHECK(std::abs(a.features().data()[i] - c.features().data()[i]) <= 1e-6f);
    }
}

TEST_CASE("backbone: interpolated features come from the updated queries") {
    // One window, two voxels: one sampled (symbol 0), one not. The unsampled
    // voxel must pick up the sampled voxel's *new* feature (K'=1 copies it).
    PipelineConfig cfg = test_config();
    cfg.num_blocks = 1;
    const ModelWeights w = init_weights(cfg, 6);

    std::vector<VoxelCoord> coords = {{0, 0, 0, 0}, {0, 0, 1, 1}};  // symbols 0 and 1
    MatrixF feats = MatrixF::Random(2, cfg.channels);
    const SparseVoxelGrid grid = build_hash(cfg.voxelization.extent, coords, feats);

    const SparseVoxelGrid out = mssvt_block_forward(grid, 0, cfg, w.blocks[0]);
    CHECK(out.features().row(1) == out.features().row(0));
    CHECK(out.features().row(0) != feats.row(0));
}
