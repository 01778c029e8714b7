#include "msvt/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace msvt {

int ChessboardSpec::period() const {
    switch (rate) {
        case CbsRate::off: return 1;
        case CbsRate::half: return 2;
        case CbsRate::quarter: return 4;
        case CbsRate::eighth: return 8;
    }
    throw std::invalid_argument("chessboard: unknown rate");
}

void ChessboardSpec::validate() const {
    const int wanted = rate == CbsRate::off     ? 0
                       : rate == CbsRate::half  ? 1
                       : rate == CbsRate::quarter ? 2
                                                  : 3;
    const int have = int(axes[0]) + int(axes[1]) + int(axes[2]);
    if (have != wanted) {
        throw std::invalid_argument("chessboard: rate needs exactly " + std::to_string(wanted) +
                                    " axes, got " + std::to_string(have));
    }
}

ChessboardSpec ChessboardSpec::with_rate(CbsRate rate) {
    ChessboardSpec spec;
    spec.rate = rate;
    switch (rate) {
        case CbsRate::off: spec.axes = {false, false, false}; break;
        case CbsRate::half: spec.axes = {true, false, false}; break;
        case CbsRate::quarter: spec.axes = {true, true, false}; break;
        case CbsRate::eighth: spec.axes = {true, true, true}; break;
    }
    return spec;
}

int chessboard_symbol(const VoxelCoord& c, const ChessboardSpec& spec) {
    const int32_t vals[3] = {c.x, c.y, c.z};
    int symbol = 0;
    for (int a = 0; a < 3; ++a) {
        if (!spec.axes[a]) continue;
        symbol = symbol * 2 + (((vals[a] % 2) + 2) % 2);
    }
    return symbol;
}

std::pair<std::vector<int32_t>, std::vector<int32_t>>
sample_queries_cbs(std::span<const int32_t> members, const std::vector<VoxelCoord>& coords,
                   int block_index, const ChessboardSpec& spec) {
    spec.validate();
    const int period = spec.period();
    const int wanted = ((block_index % period) + period) % period;

    std::pair<std::vector<int32_t>, std::vector<int32_t>> out;
    for (int32_t idx : members) {
        if (chessboard_symbol(coords[idx], spec) == wanted) {
            out.first.push_back(idx);
        } else {
            out.second.push_back(idx);
        }
    }
    return out;
}

std::vector<int32_t> farthest_point_sample(std::span<const std::array<int32_t, 3>> coords,
                                           int k) {
    if (k < 0) throw std::invalid_argument("farthest_point_sample: k must be >= 0");
    const int32_t n = static_cast<int32_t>(coords.size());
    if (k == 0) return {};
    if (n == 0) throw std::invalid_argument("farthest_point_sample: empty input with k > 0");

    int32_t seed = 0;
    for (int32_t i = 1; i < n; ++i) {
        if (coords[i] < coords[seed]) seed = i;
    }

    const int32_t take = std::min<int32_t>(k, n);
    std::vector<int32_t> selected;
    selected.reserve(take);
    selected.push_back(seed);

    // Squared distances are exact in int64 for integer voxel coords.
    std::vector<int64_t> min_dist(n, std::numeric_limits<int64_t>::max());
    auto relax = [&](int32_t chosen) {
        const auto& p = coords[chosen];
        for (int32_t i = 0; i < n; ++i) {
            const int64_t dx = coords[i][0] - p[0];
            const int64_t dy = coords[i][1] - p[1];
            const int64_t dz = coords[i][2] - p[2];
            min_dist[i] = std::min(min_dist[i], dx * dx + dy * dy + dz * dz);
        }
    };
    relax(seed);

    while (static_cast<int32_t>(selected.size()) < take) {
        int32_t best = -1;
        int64_t best_dist = -1;
        for (int32_t i = 0; i < n; ++i) {
            if (min_dist[i] > best_dist) {  // strict > keeps the smaller index on ties
                best_dist = min_dist[i];
                best = i;
            }
        }
        selected.push_back(best);
        relax(best);
    }
    return selected;
}

KeySampleSet balanced_multiwindow_sample(const SparseVoxelGrid& grid,
                                         const Eigen::Vector3d& center,
                                         std::span<const WindowSpec> key_windows,
                                         int64_t n_pool, int64_t n_keys,
                                         bool linear_scan_gather) {
    KeySampleSet out;
    out.scales.resize(key_windows.size());
    for (size_t m = 0; m < key_windows.size(); ++m) {
        const auto hits = linear_scan_gather
                              ? gather_window_voxels_scan(grid, center, key_windows[m], n_pool)
                              : gather_window_voxels(grid, center, key_windows[m], n_pool);
        std::vector<std::array<int32_t, 3>> hit_coords(hits.size());
        for (size_t i = 0; i < hits.size(); ++i) hit_coords[i] = grid.coords()[hits[i]].xyz();

        const int take = static_cast<int>(std::min<int64_t>(n_keys, int64_t(hits.size())));
        std::vector<int32_t> picked;
        if (take > 0) picked = farthest_point_sample(hit_coords, take);

        auto& scale = out.scales[m];
        scale.grid_indices.reserve(picked.size());
        scale.coords.reserve(picked.size());
        scale.features.resize(static_cast<int64_t>(picked.size()), grid.channels());
        for (size_t i = 0; i < picked.size(); ++i) {
            const int32_t gi = hits[picked[i]];
            scale.grid_indices.push_back(gi);
            scale.coords.push_back(grid.coords()[gi].xyz());
            scale.features.row(static_cast<int64_t>(i)) = grid.features().row(gi);
        }
    }
    return out;
}

InterpolationResult knn_interpolate(std::span<const std::array<int32_t, 3>> unsampled_coords,
                                    const MatrixF& unsampled_feats,
                                    std::span<const std::array<int32_t, 3>> sampled_coords,
                                    const MatrixF& sampled_feats, int k) {
    if (k < 1) throw std::invalid_argument("knn_interpolate: k must be >= 1");
    if (static_cast<int64_t>(unsampled_coords.size()) != unsampled_feats.rows()) {
        throw std::invalid_argument("knn_interpolate: unsampled coord/feature count mismatch");
    }
    if (static_cast<int64_t>(sampled_coords.size()) != sampled_feats.rows()) {
        throw std::invalid_argument("knn_interpolate: sampled coord/feature count mismatch");
    }

    InterpolationResult out;
    if (sampled_coords.empty()) {
        out.features = unsampled_feats;
        out.interpolated = false;
        return out;
    }

    constexpr double kEps = 1e-8;
    const int64_t cols = sampled_feats.cols();
    const int take = std::min<int>(k, static_cast<int>(sampled_coords.size()));
    out.features.resize(unsampled_feats.rows(), cols);
    out.interpolated = true;

    std::vector<std::pair<int64_t, int32_t>> dist;  // (squared distance, index)
    for (int64_t u = 0; u < static_cast<int64_t>(unsampled_coords.size()); ++u) {
        dist.clear();
        for (int32_t s = 0; s < static_cast<int32_t>(sampled_coords.size()); ++s) {
            const int64_t dx = unsampled_coords[u][0] - sampled_coords[s][0];
            const int64_t dy = unsampled_coords[u][1] - sampled_coords[s][1];
            const int64_t dz = unsampled_coords[u][2] - sampled_coords[s][2];
            dist.emplace_back(dx * dx + dy * dy + dz * dz, s);
        }
        std::sort(dist.begin(), dist.end());

        Eigen::VectorXd accum = Eigen::VectorXd::Zero(cols);
        double weight_sum = 0.0;
        for (int j = 0; j < take; ++j) {
            const double w = 1.0 / (std::sqrt(double(dist[j].first)) + kEps);
            accum += w * sampled_feats.row(dist[j].second).cast<double>().transpose();
            weight_sum += w;
        }
        out.features.row(u) = (accum / weight_sum).cast<float>().transpose();
    }
    return out;
}

}  // namespace msvt
