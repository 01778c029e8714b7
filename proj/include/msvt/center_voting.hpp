#pragma once

#include "msvt/attention.hpp"
#include "msvt/config.hpp"
#include "msvt/types.hpp"
#include "msvt/voxel_hash.hpp"

#include <span>
#include <string>
#include <vector>

namespace msvt {

// Two small MLPs: offset head (C -> hidden -> 3) and objectness head
// (C -> hidden -> 1, logistic-squashed). ReLU between the affine layers.
// Held in float64 so gradient checks are not dominated by rounding; the
// container stores float32 and init quantizes accordingly.
struct VoteModuleWeights {
    MatrixD offset_w1, offset_w2;   // C x H, H x 3
    VectorD offset_b1, offset_b2;
    MatrixD obj_w1, obj_w2;         // C x H, H x 1
    VectorD obj_b1, obj_b2;

    int channels() const { return static_cast<int>(offset_w1.rows()); }
    int hidden() const { return static_cast<int>(offset_w1.cols()); }
};

struct VoteOutput {
    MatrixD offsets;        // N x 3, voxel-coordinate units
    VectorD objectness;     // N, in (0, 1)
};

// Offset = offset MLP(f); objectness = sigmoid(objectness MLP(f)). Rowwise
// over a batch of seed features. Throws on non-finite inputs.
VoteOutput vote_forward(const MatrixD& features, const VoteModuleWeights& w);

// (1/N_f) * sum over foreground seeds of ||offset - target||_2. With no
// foreground seeds the loss is defined as 0 and *no_foreground is set.
double vote_loss(const MatrixD& offsets, const MatrixD& targets,
                 std::span<const uint8_t> fg, bool* no_foreground = nullptr);

// Mean focal loss over all seeds; p clamped to [1e-7, 1 - 1e-7].
double focal_objectness_loss(const VectorD& p, std::span<const uint8_t> labels,
                             double alpha = 0.25, double gamma = 2.0);

// Gradients of vote_loss + focal_objectness_loss w.r.t. every MLP parameter
// and the input features.
struct VoteGradients {
    VoteModuleWeights param;  // same shapes, gradient values
    MatrixD features;         // N x C
    double loss = 0.0;
};

VoteGradients vote_backward(const MatrixD& features, const MatrixD& offset_targets,
                            std::span<const uint8_t> fg, std::span<const uint8_t> labels,
                            const VoteModuleWeights& w);

// Primitive used by vote_backward: backward of one two-layer ReLU MLP given
// the upstream gradient on its output.
struct MlpGradients {
    MatrixD w1, w2;
    VectorD b1, b2;
    MatrixD input;
};

MlpGradients mlp2_backward(const MatrixD& input, const MatrixD& w1, const VectorD& b1,
                           const MatrixD& w2, const VectorD& b2, const MatrixD& upstream);

// Ground-truth boxes in meters (center, size, yaw about +z).
struct GtBox {
    Eigen::Vector3d center;
    Eigen::Vector3d size;  // l, w, h
    double yaw = 0.0;

    double volume() const { return size[0] * size[1] * size[2]; }
    bool contains(const Eigen::Vector3d& p) const;
};

std::vector<GtBox> load_boxes_csv(const std::string& path);
void save_boxes_csv(std::span<const GtBox> boxes, const std::string& path);

// Foreground mask and ground-truth displacement (voxel-coordinate units) per
// voxel. A voxel is foreground iff its metric center lies inside a box;
// overlaps resolve to the smallest-volume box.
struct VoteTargets {
    std::vector<uint8_t> fg;
    MatrixD offsets;               // N x 3, zero for background
    std::vector<int32_t> box_index;  // -1 for background
};

VoteTargets assign_targets(std::span<const VoxelCoord> coords, const VoxelizationSpec& spec,
                           std::span<const GtBox> boxes);

// One vote per retained seed at (voxel center + offset), in voxel units.
struct VoteSet {
    std::vector<Eigen::Vector3d> positions;
    MatrixF features;              // refined seed features, one row per vote
    std::vector<int32_t> seed_index;
};

VoteSet generate_votes(const SparseVoxelGrid& refined, const VoteModuleWeights& w,
                       double threshold);
// Oracle path: retain the foreground seeds and inject the given offsets.
VoteSet generate_votes_oracle(const SparseVoxelGrid& refined, std::span<const uint8_t> fg,
                              const MatrixD& offsets);

// Re-voxelizes votes at the grid's own resolution; features are per-voxel
// means. Positions are clamped into the extent first (clamped count reported).
SparseVoxelGrid revoxelize_votes(const VoteSet& votes, const Extent& extent, int32_t batch,
                                 int channels, int64_t* clamped = nullptr);

// Mixed-scale context pass over the vote voxels: every non-empty voxel of
// `vote_grid` is a query (no chessboard sampling); keys come from `refined`
// via balanced multi-window sampling at the configured scales.
SparseVoxelGrid context_aggregate(const SparseVoxelGrid& vote_grid,
                                  const SparseVoxelGrid& refined, const PipelineConfig& cfg,
                                  const BlockWeights& w);

// Merges enriched vote voxels into the refined grid: empty sites are
// inserted, occupied sites follow the merge rule (replace or mean). Never
// removes a voxel.
SparseVoxelGrid merge_voxels(const SparseVoxelGrid& vote_grid, const SparseVoxelGrid& refined,
                             MergeRule rule);

}  // namespace msvt
