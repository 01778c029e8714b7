#include "msvt/voxel_hash.hpp"

#include <doctest.h>

#include <random>
#include <unordered_set>

using namespace msvt;

TEST_CASE("flatten_key: direct evaluation") {
    const Extent extent{10, 10, 10};
    CHECK(flatten_key({0, 1, 2, 3}, extent) == 123);
    CHECK(flatten_key({1, 1, 2, 3}, extent) == 1123);
    CHECK(flatten_key({0, 0, 0, 0}, extent) == 0);
    CHECK_THROWS_AS(flatten_key({0, 10, 0, 0}, extent), std::out_of_range);
    CHECK_THROWS_AS(flatten_key({-1, 0, 0, 0}, extent), std::out_of_range);
}

TEST_CASE("build_hash: empty grid misses everywhere") {
    const SparseVoxelGrid grid = build_hash({4, 4, 4}, {}, MatrixF(0, 2));
    CHECK(grid.size() == 0);
    CHECK_FALSE(grid.lookup({0, 1, 1, 1}).has_value());
    const auto gathered = grid.gather(std::vector<VoxelCoord>{{0, 0, 0, 0}, {0, 3, 3, 3}});
    CHECK(gathered.indices.empty());
    CHECK(gathered.hit == std::vector<uint8_t>{0, 0});
}

TEST_CASE("build_hash: colliding keys fall back to linear probing") {
    // Capacity for N=2 is 4; keys 1 and 5 collide mod 4.
    const Extent extent{10, 10, 10};
    std::vector<VoxelCoord> coords = {{0, 0, 0, 1}, {0, 0, 0, 5}};
    MatrixF feats(2, 1);
    feats << 7.0f, 9.0f;
    const SparseVoxelGrid grid = build_hash(extent, coords, feats);
    REQUIRE(grid.table_capacity() == 4);

    for (int32_t i = 0; i < 2; ++i) {
        const auto idx = grid.lookup(coords[i]);
        REQUIRE(idx.has_value());
        CHECK(*idx == i);
    }
}

TEST_CASE("build_hash: duplicate coord error names the coord") {
    std::vector<VoxelCoord> coords = {{0, 1, 2, 3}, {0, 1, 2, 3}};
    CHECK_THROWS_WITH_AS(build_hash({10, 10, 10}, coords, MatrixF::Zero(2, 1)),
                         doctest::Contains("(b=0, 1, 2, 3)"), std::invalid_argument);
}

TEST_CASE("lookup: misses are values, not errors") {
    std::vector<VoxelCoord> coords = {{0, 2, 3, 4}};
    const SparseVoxelGrid grid = build_hash({8, 8, 8}, coords, MatrixF::Zero(1, 1));
    CHECK(grid.lookup({0, 2, 3, 4}) == 2 - 2);   // stored -> index 0
    CHECK_FALSE(grid.lookup({0, 2, 3, 5}).has_value());
    CHECK_FALSE(grid.lookup({0, 8, 0, 0}).has_value());  // x == x_max
    CHECK_FALSE(grid.lookup({1, 2, 3, 4}).has_value());  // wrong batch
}

TEST_CASE("lookup/gather match a linear-scan oracle on random grids") {
    std::mt19937_64 gen(13);
    const Extent extent{64, 64, 32};
    const int64_t n = 10000;

    std::unordered_set<int64_t> seen;
    std::vector<VoxelCoord> coords;
    while (static_cast<int64_t>(coords.size()) < n) {
        VoxelCoord c{0, int32_t(gen() % 64), int32_t(gen() % 64), int32_t(gen() % 32)};
        if (seen.insert(flatten_key(c, extent)).second) coords.push_back(c);
    }
    MatrixF feats(n, 3);
    for (int64_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) feats(i, c) = float(gen() % 1000) / 31.0f;
    }
    const SparseVoxelGrid grid = build_hash(extent, coords, feats);

    // Every stored coord resolves to its own index.
    for (int64_t i = 0; i < n; ++i) {
        const auto idx = grid.lookup(coords[i]);
        REQUIRE(idx.has_value());
        CHECK(*idx == int32_t(i));
    }

    // Mixed probe list vs per-coord scan.
    std::vector<VoxelCoord> probes;
    for (int p = 0; p < 3000; ++p) {
        if (p % 3 == 0) {
            probes.push_back(coords[gen() % n]);
        } else {
            probes.push_back({0, int32_t(gen() % 64), int32_t(gen() % 64), int32_t(gen() % 32)});
        }
    }
    const GatherResult fast = grid.gather(probes);
    size_t row = 0;
    for (size_t p = 0; p < probes.size(); ++p) {
        int32_t found = -1;
        for (int32_t i = 0; i < n; ++i) {
            if (coords[i] == probes[p]) {
                found = i;
                break;
            }
        }
        REQUIRE((found >= 0) == bool(fast.hit[p]));
        if (found >= 0) {
            CHECK(fast.indices[row] == found);
            CHECK(fast.features.row(int64_t(row)) == feats.row(found));
            ++row;
        }
    }
}

TEST_CASE("gather: full coord list is the identity gather") {
    std::vector<VoxelCoord> coords = {{0, 0, 0, 0}, {0, 1, 1, 1}, {0, 2, 0, 1}};
    MatrixF feats(3, 2);
    feats << 1, 2, 3, 4, 5, 6;
    const SparseVoxelGrid grid = build_hash({4, 4, 4}, coords, feats);
    const GatherResult all = grid.gather(coords);
    CHECK(all.hit == std::vector<uint8_t>{1, 1, 1});
    CHECK(all.features == feats);
}

TEST_CASE("build_hash: capacity keeps load factor at or below one half") {
    for (int64_t n : {1, 3, 7, 100, 1000}) {
        std::mt19937_64 gen(n);
        const Extent extent{64, 64, 64};
        std::unordered_set<int64_t> seen;
        std::vector<VoxelCoord> coords;
        while (static_cast<int64_t>(coords.size()) < n) {
            VoxelCoord c{0, int32_t(gen() % 64), int32_t(gen() % 64), int32_t(gen() % 64)};
            if (seen.insert(flatten_key(c, extent)).second) coords.push_back(c);
        }
        const SparseVoxelGrid grid = build_hash(extent, coords, MatrixF::Zero(n, 1));
        CHECK(grid.table_capacity() >= 2 * n);
        CHECK((grid.table_capacity() & (grid.table_capacity() - 1)) == 0);
    }
}
