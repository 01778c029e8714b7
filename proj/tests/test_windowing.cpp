#include "msvt/windowing.hpp"

#include "msvt/oracle.hpp"

#include <doctest.h>

#include <map>
#include <random>
#include <set>
#include <unordered_set>

using namespace msvt;

namespace {

SparseVoxelGrid random_grid(uint64_t seed, const Extent& extent, int64_t n) {
    std::mt19937_64 gen(seed);
    std::unordered_set<int64_t> seen;
    std::vector<VoxelCoord> coords;
    while (static_cast<int64_t>(coords.size()) < n) {
        VoxelCoord c{0, int32_t(gen() % uint64_t(extent.x)), int32_t(gen() % uint64_t(extent.y)),
                     int32_t(gen() % uint64_t(extent.z))};
        if (seen.insert(flatten_key(c, extent)).second) coords.push_back(c);
    }
    MatrixF feats(n, 2);
    for (int64_t i = 0; i < n; ++i) {
        feats(i, 0) = float(i);
        feats(i, 1) = float(gen() % 97);
    }
    return build_hash(extent, std::move(coords), std::move(feats));
}

}  // namespace

TEST_CASE("partition: window center formula") {
    std::vector<VoxelCoord> coords = {{0, 4, 5, 2}};
    const SparseVoxelGrid grid = build_hash({16, 16, 16}, coords, MatrixF::Zero(1, 1));
    const WindowSet windows = partition_query_windows(grid, WindowSpec{{3, 3, 5}});
    REQUIRE(windows.size() == 1);
    CHECK(windows.centers[0] == Eigen::Vector3d(4.5, 4.5, 2.5));
    CHECK(windows.members[0] == std::vector<int32_t>{0});
}

TEST_CASE("partition: duplicate centers are eliminated") {
    std::vector<VoxelCoord> coords = {{0, 0, 0, 0}, {0, 2, 2, 4}};
    const SparseVoxelGrid grid = build_hash({16, 16, 16}, coords, MatrixF::Zero(2, 1));
    const WindowSet windows = partition_query_windows(grid, WindowSpec{{3, 3, 5}});
    REQUIRE(windows.size() == 1);
    CHECK(windows.centers[0] == Eigen::Vector3d(1.5, 1.5, 2.5));
    CHECK(windows.members[0].size() == 2);
}

TEST_CASE("partition: every voxel in exactly one window, count matches brute force") {
    const SparseVoxelGrid grid = random_grid(5, {32, 32, 12}, 1000);
    const WindowSpec r0{{3, 3, 5}};
    const WindowSet windows = partition_query_windows(grid, r0);

    // Brute-force grouping oracle.
    std::map<std::array<int32_t, 3>, std::set<int32_t>> expected;
    for (int32_t i = 0; i < 1000; ++i) {
        const auto& c = grid.coords()[i];
        expected[{c.x / 3, c.y / 3, c.z / 5}].insert(i);
    }
    REQUIRE(windows.size() == static_cast<int64_t>(expected.size()));

    std::vector<int> hits(1000, 0);
    for (int64_t j = 0; j < windows.size(); ++j) {
        const auto it = expected.find(windows.cells[j]);
        REQUIRE(it != expected.end());
        CHECK(std::set<int32_t>(windows.members[j].begin(), windows.members[j].end()) ==
              it->second);
        for (int32_t idx : windows.members[j]) hits[idx] += 1;
    }
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("gather_window_voxels: empty neighborhood") {
    std::vector<VoxelCoord> coords = {{0, 30, 30, 8}};
    const SparseVoxelGrid grid = build_hash({32, 32, 12}, coords, MatrixF::Zero(1, 1));
    CHECK(gather_window_voxels(grid, {1.5, 1.5, 2.5}, WindowSpec{{3, 3, 5}}, 64).empty());
}

TEST_CASE("gather_window_voxels: matches the dense box-scan oracle") {
    const SparseVoxelGrid grid = random_grid(17, {24, 24, 10}, 600);
    const oracle::DenseGrid dense = oracle::dense_from_sparse(grid);
    const WindowSet windows = partition_query_windows(grid, WindowSpec{{3, 3, 5}});
    const WindowSpec key_window{{7, 7, 7}};

    for (int64_t j = 0; j < windows.size(); ++j) {
        const auto fast = gather_window_voxels(grid, windows.centers[j], key_window, 1 << 20);
        const auto slow = oracle::dense_window_gather(dense, windows.centers[j], key_window);
        CHECK(fast == slow);
    }
    // The linear-scan variant agrees too.
    for (int64_t j = 0; j < std::min<int64_t>(windows.size(), 10); ++j) {
        CHECK(gather_window_voxels_scan(grid, windows.centers[j], key_window, 1 << 20) ==
              gather_window_voxels(grid, windows.centers[j], key_window, 1 << 20));
    }
}

TEST_CASE("gather_window_voxels: cap keeps the smallest flattened keys") {
    std::vector<VoxelCoord> coords = {{0, 2, 2, 2}, {0, 1, 1, 1}, {0, 3, 3, 3},
                                      {0, 2, 1, 3}, {0, 1, 3, 2}};
    const SparseVoxelGrid grid = build_hash({8, 8, 8}, coords, MatrixF::Zero(5, 1));
    const auto one = gather_window_voxels(grid, {2.5, 2.5, 2.5}, WindowSpec{{5, 5, 5}}, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == 1);  // (1,1,1) has the smallest flattened key

    const auto all = gather_window_voxels(grid, {2.5, 2.5, 2.5}, WindowSpec{{5, 5, 5}}, 64);
    REQUIRE(all.size() == 5);
    for (size_t i = 1; i < all.size(); ++i) {
        CHECK(flatten_key(coords[all[i - 1]], grid.extent()) <
              flatten_key(coords[all[i]], grid.extent()));
    }
}

TEST_CASE("partition and gather agree on the query window itself") {
    const SparseVoxelGrid grid = random_grid(23, {30, 30, 10}, 800);
    const WindowSpec r0{{3, 3, 5}};
    const WindowSet windows = partition_query_windows(grid, r0);
    for (int64_t j = 0; j < windows.size(); ++j) {
        auto gathered = gather_window_voxels(grid, windows.centers[j], r0, 1 << 20);
        auto members = windows.members[j];
        std::sort(gathered.begin(), gathered.end());
        std::sort(members.begin(), members.end());
        CHECK(gathered == members);
    }
}

TEST_CASE("key windows around the same center are nested") {
    const SparseVoxelGrid grid = random_grid(31, {30, 30, 10}, 800);
    const WindowSet windows = partition_query_windows(grid, WindowSpec{{3, 3, 5}});
    for (int64_t j = 0; j < windows.size(); ++j) {
        const auto small = gather_window_voxels(grid, windows.centers[j], WindowSpec{{3, 3, 5}},
                                                1 << 20);
        const auto large = gather_window_voxels(grid, windows.centers[j], WindowSpec{{7, 7, 7}},
                                                1 << 20);
        const std::set<int32_t> large_set(large.begin(), large.end());
        for (int32_t idx : small) CHECK(large_set.count(idx) == 1);
    }
}
