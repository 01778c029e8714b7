#include "msvt/center_voting.hpp"

#include "msvt/backbone.hpp"
#include "msvt/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace msvt;

namespace {

VoteModuleWeights zero_weights(int channels, int hidden) {
    VoteModuleWeights w;
    w.offset_w1 = MatrixD::Zero(channels, hidden);
    w.offset_b1 = VectorD::Zero(hidden);
    w.offset_w2 = MatrixD::Zero(hidden, 3);
    w.offset_b2 = VectorD::Zero(3);
    w.obj_w1 = MatrixD::Zero(channels, hidden);
    w.obj_b1 = VectorD::Zero(hidden);
    w.obj_w2 = MatrixD::Zero(hidden, 1);
    w.obj_b2 = VectorD::Zero(1);
    return w;
}

}  // namespace

TEST_CASE("vote_forward: zero weights give zero offset and p = 0.5") {
    const VoteModuleWeights w = zero_weights(4, 3);
    MatrixD f(1, 4);
    f << 1.0, -2.0, 0.5, 3.0;
    const VoteOutput out = vote_forward(f, w);
    CHECK(out.offsets.row(0).isZero(0.0));
    CHECK(out.objectness[0] == 0.5);
}

TEST_CASE("vote_forward: hand-computed two-layer affine path") {
    // Single-path weights: h = relu(2f + 1), offset_x = 3h - 4.
    VoteModuleWeights w = zero_weights(1, 1);
    w.offset_w1(0, 0) = 2.0;
    w.offset_b1[0] = 1.0;
    w.offset_w2(0, 0) = 3.0;
    w.offset_b2[0] = -4.0;

    MatrixD f(2, 1);
    f << 1.5, -3.0;  // second row drives the ReLU dead region
    const VoteOutput out = vote_forward(f, w);
    CHECK(out.offsets(0, 0) == doctest::Approx(3.0 * (2.0 * 1.5 + 1.0) - 4.0));
    CHECK(out.offsets(1, 0) == doctest::Approx(-4.0));  // relu(-5) = 0

    // Batch call equals per-row calls.
    for (int64_t i = 0; i < 2; ++i) {
        const VoteOutput solo = vote_forward(f.row(i), w);
        CHECK(solo.offsets(0, 0) == out.offsets(i, 0));
        CHECK(solo.objectness[0] == out.objectness[i]);
    }
}

TEST_CASE("vote_loss: frozen small cases") {
    MatrixD offsets(2, 3), targets(2, 3);
    offsets.setZero();
    targets.setZero();
    std::vector<uint8_t> fg = {1, 1};
    CHECK(vote_loss(offsets, targets, fg) == 0.0);

    offsets(0, 0) = 1.0;  // one fg seed, unit error
    std::vector<uint8_t> one_fg = {1, 0};
    CHECK(vote_loss(offsets, targets, one_fg) == doctest::Approx(1.0));

    // Errors 3 and 4 in norm -> mean 3.5.
    MatrixD off2(2, 3), tgt2(2, 3);
    off2.setZero();
    tgt2.setZero();
    off2(0, 0) = 3.0;
    off2(1, 1) = 4.0;
    CHECK(vote_loss(off2, tgt2, fg) == doctest::Approx(3.5));

    // No foreground: loss defined as 0 with the flag set.
    bool no_fg = false;
    std::vector<uint8_t> none = {0, 0};
    CHECK(vote_loss(off2, tgt2, none, &no_fg) == 0.0);
    CHECK(no_fg);
}

TEST_CASE("focal loss: frozen values and monotonicity") {
    const uint8_t one = 1, zero = 0;
    VectorD p(1);

    p << 1.0 - 1e-7;
    CHECK(focal_objectness_loss(p, std::span(&one, 1)) == doctest::Approx(0.0).epsilon(1e-9));

    p << 0.5;
    CHECK(focal_objectness_loss(p, std::span(&one, 1)) ==
          doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-9));

    p << 1e-6;
    CHECK(focal_objectness_loss(p, std::span(&zero, 1)) < 1e-4);

    // Decreasing in p for label-1 samples.
    double prev = std::numeric_limits<double>::infinity();
    for (double prob = 0.05; prob < 1.0; prob += 0.05) {
        p << prob;
        const double loss = focal_objectness_loss(p, std::span(&one, 1));
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("assign_targets: containment and yaw") {
    VoxelizationSpec spec;
    spec.voxel_size = {1.0f, 1.0f, 1.0f};
    spec.origin = {-4.0f, -4.0f, -4.0f};
    spec.extent = {8, 8, 8};

    // Voxel (3,3,3) has center (-0.5,-0.5,-0.5); voxel (4,4,4) has (0.5,0.5,0.5).
    std::vector<VoxelCoord> coords = {{0, 3, 3, 3}, {0, 0, 0, 0}};

    GtBox box;
    box.center = {-0.5, -0.5, -0.5};
    box.size = {1.0, 1.0, 1.0};
    const auto t = assign_targets(coords, spec, std::vector<GtBox>{box});
    CHECK(t.fg[0] == 1);
    CHECK(t.offsets.row(0).isZero(0.0));
    CHECK(t.fg[1] == 0);
    CHECK(t.box_index[1] == -1);

    // A box yawed 90 degrees behaves like the unrotated box with l/w swapped.
    GtBox slab;
    slab.center = {0.0, 0.0, 0.0};
    slab.size = {4.0, 1.2, 8.0};
    slab.yaw = M_PI / 2.0;
    GtBox swapped = slab;
    swapped.size = {1.2, 4.0, 8.0};
    swapped.yaw = 0.0;
    std::mt19937_64 gen(3);
    for (int i = 0; i < 200; ++i) {
        const Eigen::Vector3d p{double(gen() % 800) / 100.0 - 4.0,
                                double(gen() % 800) / 100.0 - 4.0,
                                double(gen() % 800) / 100.0 - 4.0};
        CHECK(slab.contains(p) == swapped.contains(p));
    }

    // Overlapping boxes: the smaller volume wins.
    GtBox big;
    big.center = {-0.5, -0.5, -0.5};
    big.size = {3.0, 3.0, 3.0};
    const auto overlap = assign_targets(coords, spec, std::vector<GtBox>{big, box});
    CHECK(overlap.box_index[0] == 1);
}

TEST_CASE("vote gradients: analytic equals finite differences") {
    std::mt19937_64 gen(5);
    auto uniform = [&](double s) { return (double(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * s; };
    const int c = 6, h = 4;
    const int64_t n = 5;

    VoteModuleWeights w = zero_weights(c, h);
    for (auto* m : {&w.offset_w1, &w.offset_w2, &w.obj_w1, &w.obj_w2}) {
        for (int64_t i = 0; i < m->size(); ++i) m->data()[i] = uniform(0.6);
    }
    for (auto* v : {&w.offset_b1, &w.offset_b2, &w.obj_b1, &w.obj_b2}) {
        for (int64_t i = 0; i < v->size(); ++i) (*v)[i] = uniform(0.3);
    }

    MatrixD features(n, c), targets(n, 3);
    for (int64_t i = 0; i < features.size(); ++i) features.data()[i] = uniform(1.0);
    for (int64_t i = 0; i < targets.size(); ++i) targets.data()[i] = uniform(2.0);
    std::vector<uint8_t> fg = {1, 0, 1, 1, 0};
    std::vector<uint8_t> labels = {1, 0, 1, 1, 0};

    const VoteGradients grads = vote_backward(features, targets, fg, labels, w);

    auto loss_at = [&](const VoteModuleWeights& probe) {
        const VoteOutput out = vote_forward(features, probe);
        return vote_loss(out.offsets, targets, fg) +
               focal_objectness_loss(out.objectness, labels);
    };
    const double step = 1e-4;
    auto check_grad = [&](double* param, double analytic) {
        const double saved = *param;
        *param = saved + step;
        const double up = loss_at(w);
        *param = saved - step;
        const double down = loss_at(w);
        *param = saved;
        const double fd = (up - down) / (2.0 * step);
        CHECK(std::abs(fd - analytic) <=
              1e-4 * std::max({std::abs(fd), std::abs(analytic), 1e-6}));
    };
    for (int64_t i = 0; i < w.offset_w1.size(); i += 3) {
        check_grad(w.offset_w1.data() + i, grads.param.offset_w1.data()[i]);
    }
    for (int64_t i = 0; i < w.obj_w2.size(); ++i) {
        check_grad(w.obj_w2.data() + i, grads.param.obj_w2.data()[i]);
    }
    for (int64_t i = 0; i < w.offset_b2.size(); ++i) {
        check_grad(w.offset_b2.data() + i, grads.param.offset_b2.data()[i]);
    }
}

TEST_CASE("generate_votes: thresholds and oracle offsets") {
    const Extent extent{8, 8, 4};
    std::vector<VoxelCoord> coords = {{0, 1, 1, 1}, {0, 5, 5, 2}};
    MatrixF feats = MatrixF::Constant(2, 4, 0.25f);
    const SparseVoxelGrid grid = build_hash(extent, coords, feats);

    // Zero weights: p = 0.5 everywhere.
    const VoteModuleWeights w = zero_weights(4, 3);
    CHECK(generate_votes(grid, w, 0.9).positions.empty());
    CHECK(generate_votes(grid, w, 0.0).positions.size() == 2);  // one vote per voxel

    // Injected offsets land votes exactly at seed center + offset.
    MatrixD offsets(2, 3);
    offsets << 0.5, 0.5, 0.5, -1.0, 0.0, 0.25;
    std::vector<uint8_t> fg = {1, 0};
    const VoteSet votes = generate_votes_oracle(grid, fg, offsets);
    REQUIRE(votes.positions.size() == 1);
    CHECK(votes.positions[0] == Eigen::Vector3d{2.0, 2.0, 2.0});
    CHECK(votes.seed_index[0] == 0);
}

TEST_CASE("revoxelize_votes: per-voxel means, clamping, empty set") {
    const Extent extent{8, 8, 4};
    VoteSet votes;
    votes.positions = {{1.25, 1.75, 0.5}, {1.75, 1.25, 0.9}, {-3.0, 2.5, 1.5}};
    votes.features.resize(3, 2);
    votes.features << 1.0f, 2.0f, 3.0f, 4.0f, 9.0f, 9.0f;

    int64_t clamped = 0;
    const SparseVoxelGrid grid = revoxelize_votes(votes, extent, 0, 2, &clamped);
    CHECK(clamped == 1);
    REQUIRE(grid.size() == 2);
    const auto shared = grid.lookup({0, 1, 1, 0});
    REQUIRE(shared.has_value());
    CHECK(grid.features()(*shared, 0) == 2.0f);  // mean of 1 and 3
    CHECK(grid.features()(*shared, 1) == 3.0f);  // mean of 2 and 4
    CHECK(grid.lookup({0, 0, 2, 1}).has_value());  // clamped x -> 0

    const SparseVoxelGrid empty = revoxelize_votes(VoteSet{{}, MatrixF(0, 2), {}}, extent, 0, 2);
    CHECK(empty.size() == 0);
}

TEST_CASE("context_aggregate: empty sets and the zero-key composition") {
    PipelineConfig cfg;
    cfg.channels = 16;
    cfg.heads_per_group = {2, 2};
    cfg.threads = 1;
    cfg.voxelization.extent = {32, 32, 8};
    const ModelWeights w = init_weights(cfg, 11);

    const SparseVoxelGrid empty = build_hash(cfg.voxelization.extent, {}, MatrixF(0, 16));
    const SparseVoxelGrid refined = build_hash(
        cfg.voxelization.extent, {VoxelCoord{0, 30, 30, 7}}, MatrixF::Constant(1, 16, 1.0f));

    CHECK(context_aggregate(empty, refined, cfg, w.context).size() == 0);

    // Votes far from any refined voxel: every key scale is empty, so the
    // output is exactly merge_heads_ffn over zero group outputs.
    const SparseVoxelGrid lone_vote = build_hash(
        cfg.voxelization.extent, {VoxelCoord{0, 2, 2, 2}}, MatrixF::Constant(1, 16, 0.5f));
    const SparseVoxelGrid out = context_aggregate(lone_vote, refined, cfg, w.context);
    const std::vector<MatrixF> zero_groups = {MatrixF::Zero(1, 8), MatrixF::Zero(1, 8)};
    const MatrixF expected = merge_heads_ffn(zero_groups, w.context);
    for (int c = 0; c < 16; ++c) {
        CHECK(out.features()(0, c) == doctest::Approx(expected(0, c)).epsilon(1e-6));
    }
}

TEST_CASE("context_aggregate: small scene matches a dense composition") {
    PipelineConfig cfg;
    cfg.channels = 16;
    cfg.heads_per_group = {2, 2};
    cfg.threads = 1;
    cfg.n_pool = int64_t(1) << 30;
    cfg.n_keys = int64_t(1) << 30;
    cfg.voxelization.extent = {16, 16, 8};
    ModelWeights weights = init_weights(cfg, 12);
    std::mt19937_64 gen(6);
    for (auto& t : weights.context.rpe_table) {
        for (int64_t i = 0; i < t.size(); ++i) {
            t.data()[i] = float((double(gen() >> 11) * 0x1.0p-53 - 0.5) * 0.1);
        }
    }

    // Refined voxels around one window; one vote voxel inside it.
    std::vector<VoxelCoord> refined_coords = {{0, 3, 3, 2}, {0, 4, 4, 2}, {0, 5, 3, 3},
                                              {0, 4, 3, 1}, {0, 6, 6, 4}};
    MatrixF refined_feats(5, 16);
    for (int64_t i = 0; i < refined_feats.size(); ++i) {
        refined_feats.data()[i] = float(double(gen() >> 11) * 0x1.0p-53 - 0.5);
    }
    const SparseVoxelGrid refined =
        build_hash(cfg.voxelization.extent, refined_coords, refined_feats);
    const SparseVoxelGrid vote_grid = build_hash(
        cfg.voxelization.extent, {VoxelCoord{0, 4, 4, 3}}, MatrixF::Constant(1, 16, 0.3f));

    const SparseVoxelGrid out = context_aggregate(vote_grid, refined, cfg, weights.context);

    // Dense composition: window center (4.5, 4.5, 2.5); keys from refined.
    const oracle::DenseGrid dense = oracle::dense_from_sparse(refined);
    const Eigen::Vector3d center{4.5, 4.5, 2.5};
    const std::vector<std::array<int32_t, 3>> x0 = {{4, 4, 3}};
    std::vector<MatrixF> group_out(2);
    const MatrixF f0 = vote_grid.features();
    std::vector<MatrixF> fm(2);
    std::vector<std::vector<std::array<int32_t, 3>>> xk(2);
    for (int m = 0; m < 2; ++m) {
        const auto hits = oracle::dense_window_gather(dense, center, cfg.key_windows[m]);
        std::vector<std::array<int32_t, 3>> coords(hits.size());
        for (size_t i = 0; i < hits.size(); ++i) coords[i] = dense.coords[hits[i]].xyz();
        const auto order = oracle::dense_fps(coords, int(hits.size()));
        fm[m].resize(int64_t(order.size()), 16);
        xk[m].resize(order.size());
        for (size_t i = 0; i < order.size(); ++i) {
            fm[m].row(int64_t(i)) = dense.features.row(hits[order[i]]);
            xk[m][i] = dense.coords[hits[order[i]]].xyz();
        }
    }
    const ProjectedQkv proj = project_qkv(f0, fm, weights.context);
    for (int m = 0; m < 2; ++m) {
        const MatrixD qm = proj.q.middleCols(m * 8, 8).cast<double>();
        const auto idx = oracle::dense_relative_index(x0, xk[m], weights.context.r_max);
        const MatrixD table = weights.context.rpe_table[m].cast<double>();
        const MatrixD bq = oracle::dense_rpe_bias(qm, table, idx, false);
        const MatrixD bk =
            oracle::dense_rpe_bias(proj.k[m].cast<double>(), table, idx, true);
        MatrixD attn(1, 8);
        for (int h = 0; h < 2; ++h) {
            attn.middleCols(h * 4, 4) = oracle::dense_attention(
                qm.middleCols(h * 4, 4), proj.k[m].cast<double>().middleCols(h * 4, 4),
                proj.v[m].cast<double>().middleCols(h * 4, 4), bq, bk,
                1.0 / std::sqrt(8.0));
        }
        group_out[m] = attn.cast<float>();
    }
    const MatrixF expected = merge_heads_ffn(group_out, weights.context);
    for (int c = 0; c < 16; ++c) {
        const double want = expected(0, c);
        CHECK(std::abs(double(out.features()(0, c)) - want) <=
              1e-5 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("merge_voxels: insert, replace, mean, and no removal") {
    const Extent extent{8, 8, 4};
    std::vector<VoxelCoord> refined_coords = {{0, 1, 1, 1}, {0, 2, 2, 2}};
    MatrixF refined_feats(2, 2);
    refined_feats << 1.0f, 1.0f, 2.0f, 2.0f;
    const SparseVoxelGrid refined = build_hash(extent, refined_coords, refined_feats);

    const SparseVoxelGrid nothing = build_hash(extent, {}, MatrixF(0, 2));
    const SparseVoxelGrid same = merge_voxels(nothing, refined, MergeRule::replace);
    CHECK(same.coords() == refined.coords());
    CHECK(same.features() == refined.features());

    std::vector<VoxelCoord> vote_coords = {{0, 2, 2, 2}, {0, 5, 5, 3}};
    MatrixF vote_feats(2, 2);
    vote_feats << 8.0f, 8.0f, 9.0f, 9.0f;
    const SparseVoxelGrid votes = build_hash(extent, vote_coords, vote_feats);

    const SparseVoxelGrid replaced = merge_voxels(votes, refined, MergeRule::replace);
    CHECK(replaced.size() == 3);  // one insert, one collision
    CHECK(replaced.features()(*replaced.lookup({0, 2, 2, 2}), 0) == 8.0f);
    CHECK(replaced.features()(*replaced.lookup({0, 5, 5, 3}), 0) == 9.0f);
    for (const auto& c : refined.coords()) CHECK(replaced.lookup(c).has_value());

    const SparseVoxelGrid averaged = merge_voxels(votes, refined, MergeRule::mean);
    CHECK(averaged.features()(*averaged.lookup({0, 2, 2, 2}), 0) == 5.0f);  // (2+8)/2
}
