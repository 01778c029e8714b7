#pragma once

#include "msvt/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace msvt {

// Flattened coordinate key: b*x_max*y_max*z_max + x*y_max*z_max + y*z_max + z.
// Injective over in-extent coords for a fixed extent. Throws std::out_of_range
// for coords outside the extent or keys that would exceed the int64 range.
int64_t flatten_key(const VoxelCoord& c, const Extent& extent);

struct GatherResult {
    std::vector<uint8_t> hit;        // one flag per probed coord
    std::vector<int32_t> indices;    // voxel index per hit, probe order
    MatrixF features;                // one row per hit, probe order
};

// Non-empty voxels as parallel arrays plus an open-addressed table from
// flattened coordinate key to voxel index. Immutable once built; lookups and
// gathers are safe from any number of threads.
class SparseVoxelGrid {
public:
    SparseVoxelGrid() = default;

    const Extent& extent() const { return extent_; }
    int32_t batch() const { return batch_; }
    int64_t size() const { return static_cast<int64_t>(coords_.size()); }
    int channels() const { return static_cast<int>(features_.cols()); }
    const std::vector<VoxelCoord>& coords() const { return coords_; }
    const MatrixF& features() const { return features_; }
    int64_t table_capacity() const { return static_cast<int64_t>(slot_keys_.size()); }

    // Returns the voxel index stored at c, or nullopt (out-of-extent coords
    // and wrong batch indices miss; a miss is a value, not an error).
    std::optional<int32_t> lookup(const VoxelCoord& c) const;

    // Order-preserving bulk lookup; hit features are bit-identical to the
    // stored rows.
    GatherResult gather(std::span<const VoxelCoord> probes) const;

    // Replaces the feature matrix. Coords (and the table) are fixed for the
    // lifetime of the grid; only row count/width checks apply.
    void set_features(MatrixF f);

    friend SparseVoxelGrid build_hash(const Extent& extent, std::vector<VoxelCoord> coords,
                                      MatrixF features);

private:
    Extent extent_;
    int32_t batch_ = 0;
    std::vector<VoxelCoord> coords_;
    MatrixF features_;
    // Open addressing with linear probing; capacity is a power of two >= 2N,
    // kEmpty marks free slots.
    std::vector<int64_t> slot_keys_;
    std::vector<int32_t> slot_index_;

    static constexpr int64_t kEmpty = -1;
};

// Builds the grid and its hash table. Slot = key mod capacity, collisions
// resolved by +1 linear probing with wraparound. coords must be unique,
// in-extent, and share one batch index; features must have one row per coord.
// Throws std::invalid_argument (duplicate/mixed batch) or std::out_of_range.
SparseVoxelGrid build_hash(const Extent& extent, std::vector<VoxelCoord> coords,
                           MatrixF features);

}  // namespace msvt
