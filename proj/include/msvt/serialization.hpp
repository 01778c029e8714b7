#pragma once

#include "msvt/attention.hpp"
#include "msvt/backbone.hpp"
#include "msvt/config.hpp"
#include "msvt/voxel_hash.hpp"

#include <string>

namespace msvt {

// Grid container: "MSVTGRD1", batch, extent, N, C, then N int32 coord rows
// (b, x, y, z) and N*C float32 feature values. Little-endian throughout.
void save_grid(const SparseVoxelGrid& grid, const std::string& path);
SparseVoxelGrid load_grid(const std::string& path);

// Weight container: "MSVTWTS1", version, tensor count, then named tensors
// (name, dims, float32 data). Loading validates shapes against the config.
void save_weights(const ModelWeights& w, const std::string& path);
ModelWeights load_weights(const std::string& path, const PipelineConfig& cfg);

// BEV container: "MSVTBEV1", extent, cell count, C, int32 (x, y) cells,
// float32 features.
void save_bev(const BevMap& bev, const std::string& path);
BevMap load_bev(const std::string& path);

// Serialized grid bytes (the on-disk encoding); handy for bit-exactness checks.
std::string grid_bytes(const SparseVoxelGrid& grid);

}  // namespace msvt
