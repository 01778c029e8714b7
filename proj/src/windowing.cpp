#include "msvt/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace msvt {

namespace {

void validate_window(const WindowSpec& r) {
    for (int a = 0; a < 3; ++a) {
        if (r.size[a] < 1) throw std::invalid_argument("window size must be >= 1 per axis");
    }
}

}  // namespace

std::array<int32_t, 3> window_low_corner(const Eigen::Vector3d& center, const WindowSpec& r) {
    std::array<int32_t, 3> lo;
    for (int a = 0; a < 3; ++a) {
        // Centers are integer multiples of 0.5, so this is exact in binary.
        lo[a] = static_cast<int32_t>(std::ceil(center[a] - double(r.size[a]) / 2.0));
    }
    return lo;
}

WindowSet partition_query_windows(const SparseVoxelGrid& grid, const WindowSpec& r0) {
    validate_window(r0);
    const auto& coords = grid.coords();

    // Cell key in cell space; extents shrink by r0 so this always fits int64.
    const int64_t cy = (grid.extent().y + r0.size[1] - 1) / r0.size[1];
    const int64_t cz = (grid.extent().z + r0.size[2] - 1) / r0.size[2];

    std::unordered_map<int64_t, int32_t> cell_to_window;
    WindowSet out;
    for (int32_t i = 0; i < static_cast<int32_t>(coords.size()); ++i) {
        const auto& c = coords[i];
        const std::array<int32_t, 3> cell = {c.x / r0.size[0], c.y / r0.size[1],
                                             c.z / r0.size[2]};
        const int64_t key = (int64_t(cell[0]) * cy + cell[1]) * cz + cell[2];
        auto [it, inserted] = cell_to_window.try_emplace(key,
                                                         static_cast<int32_t>(out.cells.size()));
        if (inserted) {
            out.cells.push_back(cell);
            out.centers.emplace_back((cell[0] + 0.5) * r0.size[0], (cell[1] + 0.5) * r0.size[1],
                                     (cell[2] + 0.5) * r0.size[2]);
            out.members.emplace_back();
        }
        out.members[it->second].push_back(i);
    }

    // Deterministic window order: ascending cell key.
    std::vector<int32_t> order(out.cells.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        return out.cells[a] < out.cells[b];
    });
    WindowSet sorted;
    sorted.centers.reserve(order.size());
    sorted.cells.reserve(order.size());
    sorted.members.reserve(order.size());
    for (int32_t idx : order) {
        sorted.centers.push_back(out.centers[idx]);
        sorted.cells.push_back(out.cells[idx]);
        sorted.members.push_back(std::move(out.members[idx]));
    }
    return sorted;
}

std::vector<int32_t> gather_window_voxels(const SparseVoxelGrid& grid,
                                          const Eigen::Vector3d& center, const WindowSpec& r,
                                          int64_t cap) {
    validate_window(r);
    if (cap < 1) throw std::invalid_argument("gather_window_voxels: cap must be >= 1");
    const auto lo = window_low_corner(center, r);

    std::vector<int32_t> hits;
    VoxelCoord probe;
    probe.b = grid.batch();
    // Ascending (x, y, z) enumeration is ascending flattened-key order, so
    // truncation at cap keeps the smallest keys.
    for (int32_t dx = 0; dx < r.size[0]; ++dx) {
        probe.x = lo[0] + dx;
        for (int32_t dy = 0; dy < r.size[1]; ++dy) {
            probe.y = lo[1] + dy;
            for (int32_t dz = 0; dz < r.size[2]; ++dz) {
                probe.z = lo[2] + dz;
                if (auto idx = grid.lookup(probe)) {
                    hits.push_back(*idx);
                    if (static_cast<int64_t>(hits.size()) >= cap) return hits;
                }
            }
        }
    }
    return hits;
}

std::vector<int32_t> gather_window_voxels_scan(const SparseVoxelGrid& grid,
                                               const Eigen::Vector3d& center, const WindowSpec& r,
                                               int64_t cap) {
    validate_window(r);
    if (cap < 1) throw std::invalid_argument("gather_window_voxels_scan: cap must be >= 1");
    const auto lo = window_low_corner(center, r);

    std::vector<std::pair<int64_t, int32_t>> found;
    const auto& coords = grid.coords();
    for (int32_t i = 0; i < static_cast<int32_t>(coords.size()); ++i) {
        const auto& c = coords[i];
        if (c.x < lo[0] || c.x >= lo[0] + r.size[0] || c.y < lo[1] || c.y >= lo[1] + r.size[1] ||
            c.z < lo[2] || c.z >= lo[2] + r.size[2]) {
            continue;
        }
        found.emplace_back(flatten_key(c, grid.extent()), i);
    }
    std::sort(found.begin(), found.end());
    std::vector<int32_t> hits;
    hits.reserve(std::min<int64_t>(cap, found.size()));
    for (const auto& [key, idx] : found) {
        hits.push_back(idx);
        if (static_cast<int64_t>(hits.size()) >= cap) break;
    }
    return hits;
}

}  // namespace msvt
