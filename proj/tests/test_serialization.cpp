#include "msvt/serialization.hpp"

#include "msvt/backbone.hpp"
#include "msvt/scene_gen.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace msvt;

namespace {

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& name) {
        path = std::filesystem::temp_directory_path() / ("msvt_ser_" + name);
    }
    ~TempFile() { std::error_code ec; std::filesystem::remove(path, ec); }
};

}  // namespace

TEST_CASE("grid container round-trips bit-identically") {
    std::vector<VoxelCoord> coords = {{2, 0, 1, 2}, {2, 3, 3, 3}, {2, 7, 0, 5}};
    MatrixF feats(3, 4);
    for (int64_t i = 0; i < feats.size(); ++i) feats.data()[i] = float(i) * 0.125f;
    const SparseVoxelGrid grid = build_hash({8, 8, 8}, coords, feats);

    TempFile f("grid.bin");
    save_grid(grid, f.path.string());
    const SparseVoxelGrid loaded = load_grid(f.path.string());
    CHECK(loaded.coords() == grid.coords());
    CHECK(loaded.features() == grid.features());
    CHECK(loaded.extent() == grid.extent());
    CHECK(loaded.batch() == 2);
    CHECK(grid_bytes(loaded) == grid_bytes(grid));
    CHECK(loaded.lookup({2, 3, 3, 3}) == 1);
}

TEST_CASE("grid container rejects foreign files") {
    TempFile f("not_a_grid.bin");
    std::ofstream(f.path) << "BOGUSMAGIC and then some";
    CHECK_THROWS_WITH_AS(load_grid(f.path.string()), doctest::Contains("bad magic"),
                         std::runtime_error);
}

TEST_CASE("weight container: dump -> load round-trip is bit-identical") {
    PipelineConfig cfg;
    cfg.channels = 32;
    cfg.heads_per_group = {2, 2};
    cfg.num_blocks = 2;
    cfg.voxelization.extent = {32, 32, 8};
    const ModelWeights w = init_weights(cfg, 77);

    TempFile f("weights.bin");
    save_weights(w, f.path.string());
    const ModelWeights loaded = load_weights(f.path.string(), cfg);

    CHECK(loaded.blocks.size() == w.blocks.size());
    for (size_t b = 0; b < w.blocks.size(); ++b) {
        CHECK(loaded.blocks[b].w_q == w.blocks[b].w_q);
        CHECK(loaded.blocks[b].w_k[1] == w.blocks[b].w_k[1]);
        CHECK(loaded.blocks[b].rpe_table[0] == w.blocks[b].rpe_table[0]);
        CHECK(loaded.blocks[b].ffn_b2 == w.blocks[b].ffn_b2);
        CHECK(loaded.blocks[b].ln_gamma == w.blocks[b].ln_gamma);
    }
    CHECK(loaded.pillar.rpe_table[0] == w.pillar.rpe_table[0]);
    CHECK(loaded.context.w_q == w.context.w_q);
    // Vote weights were quantized to float32 at init, so they round-trip too.
    CHECK(loaded.vote.offset_w1 == w.vote.offset_w1);
    CHECK(loaded.vote.obj_w2 == w.vote.obj_w2);

    // Re-saving the loaded weights yields the same bytes.
    TempFile f2("weights2.bin");
    save_weights(loaded, f2.path.string());
    std::ifstream a(f.path, std::ios::binary), b(f2.path, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
    const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
    CHECK(bytes_a == bytes_b);
}

TEST_CASE("weight container: wrong config shapes are rejected") {
    PipelineConfig cfg;
    cfg.channels = 32;
    cfg.heads_per_group = {2, 2};
    cfg.num_blocks = 2;
    cfg.voxelization.extent = {32, 32, 8};
    const ModelWeights w = init_weights(cfg, 1);
    TempFile f("weights3.bin");
    save_weights(w, f.path.string());

    PipelineConfig wider = cfg;
    wider.channels = 64;
    wider.heads_per_group = {4, 4};
    CHECK_THROWS_AS(load_weights(f.path.string(), wider), std::runtime_error);

    PipelineConfig deeper = cfg;
    deeper.num_blocks = 3;
    CHECK_THROWS_WITH_AS(load_weights(f.path.string(), deeper),
                         doctest::Contains("blocks.2"), std::runtime_error);
}

TEST_CASE("bev container round-trips") {
    BevMap bev;
    bev.extent = {8, 8, 4};
    bev.cells = {{0, 1}, {3, 3}};
    bev.features.resize(2, 3);
    bev.features << 1, 2, 3, 4, 5, 6;

    TempFile f("bev.bin");
    save_bev(bev, f.path.string());
    const BevMap loaded = load_bev(f.path.string());
    CHECK(loaded.cells == bev.cells);
    CHECK(loaded.features == bev.features);
    CHECK(loaded.extent == bev.extent);
}

TEST_CASE("config JSON round-trips through save and load") {
    PipelineConfig cfg;
    cfg.num_blocks = 3;
    cfg.channels = 32;
    cfg.heads_per_group = {2, 2};
    cfg.n_keys = 16;
    cfg.cbs = ChessboardSpec::with_rate(CbsRate::eighth);
    cfg.vote.merge_rule = MergeRule::mean;
    cfg.vote.threshold = 0.25;
    cfg.seed = 99;
    cfg.voxelization.extent = {100, 120, 12};

    TempFile f("cfg.json");
    save_config(cfg, f.path.string());
    const PipelineConfig loaded = load_config(f.path.string());
    CHECK(loaded.num_blocks == 3);
    CHECK(loaded.channels == 32);
    CHECK(loaded.heads_per_group == std::vector<int>{2, 2});
    CHECK(loaded.n_keys == 16);
    CHECK(loaded.cbs.rate == CbsRate::eighth);
    CHECK(loaded.cbs.axes == std::array<bool, 3>{true, true, true});
    CHECK(loaded.vote.merge_rule == MergeRule::mean);
    CHECK(loaded.vote.threshold == 0.25);
    CHECK(loaded.seed == 99);
    CHECK(loaded.voxelization.extent == Extent{100, 120, 12});
}

TEST_CASE("scene generator is deterministic and in range") {
    SceneParams params;
    params.seed = 5;
    const SyntheticScene a = generate_scene(params);
    const SyntheticScene b = generate_scene(params);
    REQUIRE(a.cloud.size() > 0);
    CHECK(a.cloud.size() == b.cloud.size());
    CHECK(a.boxes.size() == b.boxes.size());
    CHECK(a.cloud.xyz[0] == b.cloud.xyz[0]);

    for (const auto& p : a.cloud.xyz) {
        for (int axis = 0; axis < 3; ++axis) {
            CHECK(p[axis] >= params.range.min[axis]);
            CHECK(p[axis] < params.range.max[axis]);
        }
    }
    CHECK(a.boxes.size() == size_t(params.num_boxes));
}
