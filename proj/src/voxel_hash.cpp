#include "msvt/voxel_hash.hpp"

#include <bit>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace msvt {

namespace {

std::string coord_str(const VoxelCoord& c) {
    std::ostringstream os;
    os << "(b=" << c.b << ", " << c.x << ", " << c.y << ", " << c.z << ")";
    return os.str();
}

}  // namespace

int64_t flatten_key(const VoxelCoord& c, const Extent& extent) {
    if (c.b < 0 || !extent.contains(c.x, c.y, c.z)) {
        throw std::out_of_range("flatten_key: coord " + coord_str(c) + " outside extent (" +
                                std::to_string(extent.x) + ", " + std::to_string(extent.y) +
                                ", " + std::to_string(extent.z) + ")");
    }
    const __int128 vol = __int128(extent.x) * extent.y * extent.z;
    const __int128 key = __int128(c.b) * vol + __int128(c.x) * extent.y * extent.z +
                         __int128(c.y) * extent.z + c.z;
    if (key > std::numeric_limits<int64_t>::max()) {
        throw std::out_of_range("flatten_key: key exceeds 2^63 for coord " + coord_str(c));
    }
    return static_cast<int64_t>(key);
}

SparseVoxelGrid build_hash(const Extent& extent, std::vector<VoxelCoord> coords,
                           MatrixF features) {
    if (extent.x < 1 || extent.y < 1 || extent.z < 1) {
        throw std::invalid_argument("build_hash: extent must be >= 1 per axis");
    }
    const int64_t n = static_cast<int64_t>(coords.size());
    if (features.rows() != n) {
        throw std::invalid_argument("build_hash: feature rows (" +
                                    std::to_string(features.rows()) + ") != coord count (" +
                                    std::to_string(n) + ")");
    }

    SparseVoxelGrid grid;
    grid.extent_ = extent;
    grid.batch_ = n > 0 ? coords[0].b : 0;

    const int64_t capacity = static_cast<int64_t>(std::bit_ceil(uint64_t(std::max<int64_t>(2 * n, 1))));
    grid.slot_keys_.assign(capacity, SparseVoxelGrid::kEmpty);
    grid.slot_index_.assign(capacity, -1);
    const int64_t mask = capacity - 1;

    for (int64_t i = 0; i < n; ++i) {
        if (coords[i].b != grid.batch_) {
            throw std::invalid_argument("build_hash: mixed batch indices (" +
                                        std::to_string(coords[i].b) + " vs " +
                                        std::to_string(grid.batch_) +
                                        "); use one grid per sample");
        }
        const int64_t key = flatten_key(coords[i], extent);
        int64_t slot = key & mask;  // modulus strategy (capacity is a power of two)
        while (grid.slot_keys_[slot] != SparseVoxelGrid::kEmpty) {
            if (grid.slot_keys_[slot] == key) {
                throw std::invalid_argument("build_hash: duplicate coord " + coord_str(coords[i]));
            }
            slot = (slot + 1) & mask;
        }
        grid.slot_keys_[slot] = key;
        grid.slot_index_[slot] = static_cast<int32_t>(i);
    }

    grid.coords_ = std::move(coords);
    grid.features_ = std::move(features);
    return grid;
}

std::optional<int32_t> SparseVoxelGrid::lookup(const VoxelCoord& c) const {
    if (c.b != batch_ || c.b < 0 || !extent_.contains(c.x, c.y, c.z)) return std::nullopt;
    const int64_t key = flatten_key(c, extent_);
    const int64_t mask = static_cast<int64_t>(slot_keys_.size()) - 1;
    int64_t slot = key & mask;
    // Load factor <= 0.5 guarantees an empty slot, so this terminates.
    while (slot_keys_[slot] != kEmpty) {
        if (slot_keys_[slot] == key) return slot_index_[slot];
        slot = (slot + 1) & mask;
    }
    return std::nullopt;
}

GatherResult SparseVoxelGrid::gather(std::span<const VoxelCoord> probes) const {
    GatherResult out;
    out.hit.resize(probes.size(), 0);
    out.indices.reserve(probes.size());
    for (size_t i = 0; i < probes.size(); ++i) {
        if (auto idx = lookup(probes[i])) {
            out.hit[i] = 1;
            out.indices.push_back(*idx);
        }
    }
    out.features.resize(static_cast<int64_t>(out.indices.size()), features_.cols());
    for (size_t r = 0; r < out.indices.size(); ++r) {
        out.features.row(static_cast<int64_t>(r)) = features_.row(out.indices[r]);
    }
    return out;
}

void SparseVoxelGrid::set_features(MatrixF f) {
    if (f.rows() != static_cast<int64_t>(coords_.size())) {
        throw std::invalid_argument("set_features: row count must stay " +
                                    std::to_string(coords_.size()));
    }
    features_ = std::move(f);
}

}  // namespace msvt
