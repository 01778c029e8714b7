#include "msvt/selfcheck.hpp"

#include "msvt/backbone.hpp"
#include "msvt/center_voting.hpp"
#include "msvt/config.hpp"
#include "msvt/oracle.hpp"
#include "msvt/parallel.hpp"
#include "msvt/pointcloud_io.hpp"
#include "msvt/sampling.hpp"
#include "msvt/scene_gen.hpp"
#include "msvt/serialization.hpp"
#include "msvt/windowing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

namespace msvt::selfcheck {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}
    double uniform(double lo, double hi) {
        return lo + double(gen_() >> 11) * 0x1.0p-53 * (hi - lo);
    }
    int64_t integer(int64_t lo, int64_t hi) {  // inclusive bounds
        return lo + static_cast<int64_t>(gen_() % uint64_t(hi - lo + 1));
    }
    MatrixF matrix(int64_t rows, int64_t cols, double scale = 1.0) {
        MatrixF m(rows, cols);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < cols; ++c) {
                m(r, c) = static_cast<float>(uniform(-scale, scale));
            }
        }
        return m;
    }

private:
    std::mt19937_64 gen_;
};

// Collects expectations; the first few failures are kept in the detail text.
class Checker {
public:
    void expect(bool cond, const std::string& what) {
        ++total_;
        if (cond) return;
        ++failures_;
        if (failures_ <= 5) {
            detail_ += (detail_.empty() ? "" : "; ") + what;
        }
    }

    CheckResult finish(std::string name, Clock::time_point start, std::string note = "") {
        CheckResult r;
        r.name = std::move(name);
        r.passed = failures_ == 0;
        r.seconds = seconds_since(start);
        if (r.passed) {
            r.detail = note.empty() ? std::to_string(total_) + " expectations" : note;
        } else {
            r.detail = std::to_string(failures_) + "/" + std::to_string(total_) +
                       " expectations failed: " + detail_;
        }
        return r;
    }

private:
    int64_t total_ = 0;
    int64_t failures_ = 0;
    std::string detail_;
};

std::vector<VoxelCoord> random_unique_coords(Rng& rng, const Extent& extent, int64_t n,
                                             int32_t batch = 0) {
    std::unordered_set<int64_t> seen;
    std::vector<VoxelCoord> coords;
    coords.reserve(n);
    while (static_cast<int64_t>(coords.size()) < n) {
        VoxelCoord c;
        c.b = batch;
        c.x = static_cast<int32_t>(rng.integer(0, extent.x - 1));
        c.y = static_cast<int32_t>(rng.integer(0, extent.y - 1));
        c.z = static_cast<int32_t>(rng.integer(0, extent.z - 1));
        if (seen.insert(flatten_key(c, extent)).second) coords.push_back(c);
    }
    return coords;
}

bool close_rel(float a, double b, double tol) {
    return std::abs(double(a) - b) <= tol * std::max(1.0, std::abs(b));
}

bool close_rel_matrix(const MatrixF& a, const MatrixD& b, double tol) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (int64_t r = 0; r < a.rows(); ++r) {
        for (int64_t c = 0; c < a.cols(); ++c) {
            if (!close_rel(a(r, c), b(r, c), tol)) return false;
        }
    }
    return true;
}

PipelineConfig small_config() {
    PipelineConfig cfg;
    cfg.channels = 64;
    cfg.threads = 1;
    return cfg;
}

}  // namespace

CheckResult check_hash_gather_equivalence() {
    const auto start = Clock::now();
    Checker ck;
    Rng rng(101);

    for (int trial = 0; trial < 20; ++trial) {
        Extent extent{static_cast<int32_t>(rng.integer(8, 256)),
                      static_cast<int32_t>(rng.integer(8, 256)),
                      static_cast<int32_t>(rng.integer(8, 256))};
        const int64_t n = std::min<int64_t>(rng.integer(1, 10000), extent.volume() / 2);
        auto coords = random_unique_coords(rng, extent, n);
        MatrixF features = rng.matrix(n, 4);
        const SparseVoxelGrid grid = build_hash(extent, coords, features);

        // 10^4 probes: half stored coords, half uniform (mostly misses).
        std::vector<VoxelCoord> probes;
        probes.reserve(10000);
        for (int p = 0; p < 10000; ++p) {
            if (p % 2 == 0) {
                probes.push_back(coords[static_cast<size_t>(rng.integer(0, n - 1))]);
            } else {
                VoxelCoord c;
                c.x = static_cast<int32_t>(rng.integer(0, extent.x - 1));
                c.y = static_cast<int32_t>(rng.integer(0, extent.y - 1));
                c.z = static_cast<int32_t>(rng.integer(0, extent.z - 1));
                probes.push_back(c);
            }
        }

        const GatherResult fast = grid.gather(probes);

        // Linear-scan oracle: first matching coord index, or miss.
        size_t hit_row = 0;
        for (size_t p = 0; p < probes.size(); ++p) {
            int32_t found = -1;
            for (int32_t i = 0; i < static_cast<int32_t>(coords.size()); ++i) {
                if (coords[i] == probes[p]) {
                    found = i;
                    break;
                }
            }
            ck.expect((found >= 0) == bool(fast.hit[p]), "hit mask mismatch");
            if (found >= 0 && fast.hit[p]) {
                ck.expect(fast.indices[hit_row] == found, "gathered index mismatch");
                ck.expect(fast.features.row(static_cast<int64_t>(hit_row)) == features.row(found),
                          "gathered feature row not bit-identical");
                ++hit_row;
            }
        }
        ck.expect(hit_row == fast.indices.size(), "hit count mismatch");
    }

    const double elapsed = seconds_since(start);
    ck.expect(elapsed < 5.0, "runtime " + std::to_string(elapsed) + "s exceeds the 5s budget");
    return ck.finish("hash-gather-equivalence", start);
}

CheckResult check_window_partition() {
    const auto start = Clock::now();
    Checker ck;
    Rng rng(202);
    const std::vector<WindowSpec> window_choices = {
        WindowSpec{{3, 3, 5}}, WindowSpec{{2, 2, 2}}, WindowSpec{{1, 1, 4}},
        WindowSpec{{5, 5, 5}}};

    for (int trial = 0; trial < 20; ++trial) {
        Extent extent{static_cast<int32_t>(rng.integer(6, 64)),
                      static_cast<int32_t>(rng.integer(6, 64)),
                      static_cast<int32_t>(rng.integer(4, 16))};
        const int64_t n = std::min<int64_t>(rng.integer(1, 3000), extent.volume() / 2);
        auto coords = random_unique_coords(rng, extent, n);
        const SparseVoxelGrid grid = build_hash(extent, coords, rng.matrix(n, 2));
        const WindowSpec r0 = window_choices[static_cast<size_t>(rng.integer(0, 3))];

        const WindowSet windows = partition_query_windows(grid, r0);

        std::vector<int> membership(n, 0);
        std::set<std::array<double, 3>> center_set;
        for (int64_t j = 0; j < windows.size(); ++j) {
            center_set.insert({windows.centers[j][0], windows.centers[j][1],
                               windows.centers[j][2]});
            for (int32_t idx : windows.members[j]) {
                membership[idx] += 1;
                // Center formula, recomputed from scratch per member.
                const auto& c = coords[idx];
                const int32_t vals[3] = {c.x, c.y, c.z};
                for (int a = 0; a < 3; ++a) {
                    const double expected =
                        (std::floor(double(vals[a]) / r0.size[a]) + 0.5) * r0.size[a];
                    ck.expect(windows.centers[j][a] == expected, "center formula mismatch");
                }
            }
        }
        for (int m : membership) ck.expect(m == 1, "voxel not in exactly one window");
        ck.expect(static_cast<int64_t>(center_set.size()) == windows.size(),
                  "duplicate window centers");
    }
    return ck.finish("window-partition", start);
}

CheckResult check_fps_oracle() {
    const auto start = Clock::now();
    Checker ck;
    Rng rng(303);

    for (int trial = 0; trial < 100; ++trial) {
        const int n = static_cast<int>(rng.integer(1, 500));
        std::vector<std::array<int32_t, 3>> coords(n);
        for (auto& c : coords) {
            c = {static_cast<int32_t>(rng.integer(0, 40)),
                 static_cast<int32_t>(rng.integer(0, 40)),
                 static_cast<int32_t>(rng.integer(0, 12))};
        }
        const int k = static_cast<int>(rng.integer(0, n + 3));
        const auto fast = farthest_point_sample(coords, k);
        const auto slow = oracle::dense_fps(coords, k);
        ck.expect(fast == slow, "FPS selection differs from the dense oracle at trial " +
                                    std::to_string(trial));
    }
    return ck.finish("fps-oracle", start);
}

CheckResult check_cbs_coverage() {
    const auto start = Clock::now();
    Checker ck;
    Rng rng(404);
    const ChessboardSpec spec = ChessboardSpec::with_rate(CbsRate::quarter);

    // Random member sets: the 4-block union is exactly the member set.
    for (int trial = 0; trial < 25; ++trial) {
        const Extent extent{32, 32, 8};
        const int64_t n = rng.integer(1, 400);
        auto coords = random_unique_coords(rng, extent, n);
        std::vector<int32_t> members(coords.size());
        for (size_t i = 0; i < coords.size(); ++i) members[i] = static_cast<int32_t>(i);

        std::set<int32_t> seen;
        int64_t total_sampled = 0;
        for (int t = 0; t < 4; ++t) {
            auto [sampled, unsampled] = sample_queries_cbs(members, coords, t, spec);
            ck.expect(sampled.size() + unsampled.size() == members.size(),
                      "sampled/unsampled do not partition the members");
            total_sampled += static_cast<int64_t>(sampled.size());
            for (int32_t s : sampled) {
                ck.expect(seen.insert(s).second, "voxel sampled by two block indices");
            }
            // Circularity: t and t + period sample the same set.
            auto [wrapped, _] = sample_queries_cbs(members, coords, t + 4, spec);
            ck.expect(wrapped == sampled, "t and t+period sampled sets differ");
        }
        ck.expect(total_sampled == n && static_cast<int64_t>(seen.size()) == n,
                  "4-block union is not exactly the member set");
    }

    // Fully occupied x-y slab with even extents: exactly N/4 per block index.
    {
        const Extent extent{16, 16, 4};
        std::vector<VoxelCoord> coords;
        for (int32_t x = 0; x < extent.x; ++x) {
            for (int32_t y = 0; y < extent.y; ++y) coords.push_back({0, x, y, 1});
        }
        const int64_t n = static_cast<int64_t>(coords.size());
        std::vector<int32_t> members(coords.size());
        for (size_t i = 0; i < members.size(); ++i) members[i] = static_cast<int32_t>(i);
        for (int t = 0; t < 4; ++t) {
            auto [sampled, unsampled] = sample_queries_cbs(members, coords, t, spec);
            ck.expect(static_cast<int64_t>(sampled.size()) * 4 == n,
                      "occupied-plane sampled fraction is not exactly 1/4 at t=" +
                          std::to_string(t));
        }
    }
    return ck.finish("cbs-coverage", start);
}

CheckResult check_attention_oracle() {
    const auto start = Clock::now();
    Checker ck;
    Rng rng(505);
    const int channels = 64;
    const int groups = 2;
    const int width = channels / groups;
    const std::array<int32_t, 3> r_max{7, 7, 7};
    const int heads[2] = {4, 4};

    for (int trial = 0; trial < 100; ++trial) {
        const int nq = static_cast<int>(rng.integer(1, 16));
        const int nk0 = static_cast<int>(rng.integer(1, 32));
        const int nk1 = static_cast<int>(rng.integer(1, 32));

        BlockWeights w;
        w.r_max = r_max;
        w.w_q = rng.matrix(channels, channels, 0.3);
        for (int m = 0; m < groups; ++m) {
            w.w_k.push_back(rng.matrix(channels, width, 0.3));
            w.w_v.push_back(rng.matrix(channels, width, 0.3));
            w.rpe_table.push_back(rng.matrix(width, rpe_table_entries(r_max), 0.05));
        }

        std::vector<std::array<int32_t, 3>> x0(nq);
        for (auto& c : x0) {
            c = {static_cast<int32_t>(rng.integer(2, 4)), static_cast<int32_t>(rng.integer(2, 4)),
                 static_cast<int32_t>(rng.integer(2, 4))};
        }
        const int nks[2] = {nk0, nk1};
        std::vector<std::vector<std::array<int32_t, 3>>> xm(groups);
        std::vector<MatrixF> fm(groups);
        for (int m = 0; m < groups; ++m) {
            xm[m].resize(nks[m]);
            for (auto& c : xm[m]) {
                c = {static_cast<int32_t>(rng.integer(0, 6)),
                     static_cast<int32_t>(rng.integer(0, 6)),
                     static_cast<int32_t>(rng.integer(0, 6))};
            }
            fm[m] = rng.matrix(nks[m], channels);
        }
        const MatrixF f0 = rng.matrix(nq, channels);

        const ProjectedQkv proj = project_qkv(f0, fm, w);
        for (int m = 0; m < groups; ++m) {
            const MatrixF qm = proj.q.middleCols(int64_t(m) * width, width);
            const MatrixI index = relative_position_index(x0, xm[m], w.r_max);
            const MatrixF bq = rpe_bias(qm, w.rpe_table[m], index, RpeSide::query);
            const MatrixF bk = rpe_bias(proj.k[m], w.rpe_table[m], index, RpeSide::key);
            const MatrixF fast =
                scale_aware_attention(qm, proj.k[m], proj.v[m], bq, bk, heads[m]);

            // Dense composition from the same float Q/K/V.
            const auto oracle_index = oracle::dense_relative_index(x0, xm[m], r_max);
            for (int64_t q = 0; q < index.rows(); ++q) {
                for (int64_t k = 0; k < index.cols(); ++k) {
                    ck.expect(index(q, k) == oracle_index[q][k], "rpe index mismatch");
                }
            }
            const MatrixD bq_o = oracle::dense_rpe_bias(qm.cast<double>(),
                                                        w.rpe_table[m].cast<double>(),
                                                        oracle_index, false);
            const MatrixD bk_o = oracle::dense_rpe_bias(proj.k[m].cast<double>(),
                                                        w.rpe_table[m].cast<double>(),
                                                        oracle_index, true);
            MatrixD slow(nq, width);
            const double scale = 1.0 / std::sqrt(double(width));
            const int64_t head_width = width / heads[m];
            for (int h = 0; h < heads[m]; ++h) {
                slow.middleCols(h * head_width, head_width) = oracle::dense_attention(
                    qm.cast<double>().middleCols(h * head_width, head_width),
                    proj.k[m].cast<double>().middleCols(h * head_width, head_width),
                    proj.v[m].cast<double>().middleCols(h * head_width, head_width), bq_o, bk_o,
                    scale);
            }
            ck.expect(close_rel_matrix(fast, slow, 1e-5),
                      "sparse attention differs from dense oracle beyond 1e-5");

            // Softmax row sums: all-ones values turn each row into its sum.
            const MatrixF ones = MatrixF::Ones(nks[m], width);
            const MatrixF sums = scale_aware_attention(qm, proj.k[m], ones, bq, bk, heads[m]);
            for (int64_t q = 0; q < sums.rows(); ++q) {
                for (int64_t c = 0; c < sums.cols(); ++c) {
                    ck.expect(std::abs(double(sums(q, c)) - 1.0) <= 1e-6,
                              "softmax row does not sum to 1 within 1e-6");
                }
            }

            // Key-permutation equivariance (reversal permutation).
            MatrixF k_perm(nks[m], width), v_perm(nks[m], width);
            std::vector<std::array<int32_t, 3>> x_perm(nks[m]);
            for (int i = 0; i < nks[m]; ++i) {
                k_perm.row(i) = proj.k[m].row(nks[m] - 1 - i);
                v_perm.row(i) = proj.v[m].row(nks[m] - 1 - i);
                x_perm[static_cast<size_t>(i)] = xm[m][static_cast<size_t>(nks[m] - 1 - i)];
            }
            const MatrixI index_p = relative_position_index(x0, x_perm, w.r_max);
            const MatrixF bq_p = rpe_bias(qm, w.rpe_table[m], index_p, RpeSide::query);
            const MatrixF bk_p = rpe_bias(k_perm, w.rpe_table[m], index_p, RpeSide::key);
            const MatrixF permuted =
                scale_aware_attention(qm, k_perm, v_perm, bq_p, bk_p, heads[m]);
            ck.expect(close_rel_matrix(permuted, fast.cast<double>(), 1e-6),
                      "key permutation changed the output beyond 1e-6");

            // Translation invariance is exact at the index level.
            std::vector<std::array<int32_t, 3>> x0_shift = x0;
            std::vector<std::array<int32_t, 3>> xm_shift = xm[m];
            for (auto& c : x0_shift) {
                c[0] += 11; c[1] -= 7; c[2] += 3;
            }
            for (auto& c : xm_shift) {
                c[0] += 11; c[1] -= 7; c[2] += 3;
            }
            const MatrixI index_t = relative_position_index(x0_shift, xm_shift, w.r_max);
            ck.expect(index_t == index, "translation changed the rpe index matrix");
        }
    }
    return ck.finish("attention-oracle", start);
}

CheckResult check_block_oracle() {
    const auto start = Clock::now();
    Checker ck;
    Rng rng(606);

    PipelineConfig cfg = small_config();
    cfg.cbs = ChessboardSpec::with_rate(CbsRate::off);
    cfg.n_pool = int64_t(1) << 40;  // caps effectively unbounded
    cfg.n_keys = int64_t(1) << 40;

    const int64_t sizes[3] = {600, 1200, 2000};
    for (int trial = 0; trial < 3; ++trial) {
        const Extent extent{32, 32, 8};
        const int64_t n = sizes[trial];
        auto coords = random_unique_coords(rng, extent, n);
        const SparseVoxelGrid grid = build_hash(extent, coords, rng.matrix(n, cfg.channels));

        ModelWeights weights = init_weights(cfg, 900 + trial);
        // Nonzero position tables so the bias path is exercised.
        for (auto& table : weights.blocks[0].rpe_table) {
            table = rng.matrix(table.rows(), table.cols(), 0.05);
        }

        const SparseVoxelGrid updated =
            mssvt_block_forward(grid, 0, cfg, weights.blocks[0]);
        const oracle::DenseGrid dense = oracle::dense_from_sparse(grid);
        const MatrixF reference = oracle::dense_block_reference(
            dense, cfg.query_window, cfg.key_windows, cfg.heads_per_group, weights.blocks[0]);

        ck.expect(close_rel_matrix(updated.features(), reference.cast<double>(), 1e-5),
                  "block output differs from the dense reference beyond 1e-5 (scene " +
                      std::to_string(trial) + ")");
        ck.expect(updated.coords() == grid.coords(), "block forward moved voxel coords");
    }
    return ck.finish("block-oracle", start);
}

CheckResult check_vote_math() {
    const auto start = Clock::now();
    Checker ck;
    Rng rng(707);

    // vote_loss: zero iff exact match on foreground rows.
    {
        const int64_t n = 6;
        MatrixD offsets(n, 3);
        for (int64_t i = 0; i < n; ++i) {
            offsets.row(i) << rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2);
        }
        MatrixD targets = offsets;
        std::vector<uint8_t> fg(n, 1);
        fg[3] = 0;
        ck.expect(vote_loss(offsets, targets, fg) == 0.0, "vote_loss not 0 on exact match");
        targets(1, 2) += 0.25;
        ck.expect(vote_loss(offsets, targets, fg) > 0.0, "vote_loss 0 despite a fg mismatch");
        targets = offsets;
        targets(3, 0) += 100.0;  // background row: must not contribute
        ck.expect(vote_loss(offsets, targets, fg) == 0.0, "background row affected vote_loss");
    }

    // Focal loss frozen value at p=0.5, label=1: 0.25 * 0.25 * ln 2.
    {
        VectorD p(1);
        p << 0.5;
        const uint8_t one = 1;
        const double loss = focal_objectness_loss(p, std::span(&one, 1));
        ck.expect(std::abs(loss - 0.043321698784996581) <= 1e-5,
                  "focal(0.5, label 1) != 0.04332 within 1e-5 (got " + std::to_string(loss) +
                      ")");
    }

    // Analytic gradients vs central differences on >= 50 parameters.
    {
        const int c = 16, h = 8;
        const int64_t n = 8;
        VoteModuleWeights w;
        w.offset_w1 = rng.matrix(c, h, 0.5).cast<double>();
        w.offset_b1 = rng.matrix(h, 1, 0.5).cast<double>().col(0);
        w.offset_w2 = rng.matrix(h, 3, 0.5).cast<double>();
        w.offset_b2 = rng.matrix(3, 1, 0.5).cast<double>().col(0);
        w.obj_w1 = rng.matrix(c, h, 0.5).cast<double>();
        w.obj_b1 = rng.matrix(h, 1, 0.5).cast<double>().col(0);
        w.obj_w2 = rng.matrix(h, 1, 0.5).cast<double>();
        w.obj_b2 = rng.matrix(1, 1, 0.5).cast<double>().col(0);

        const MatrixD features = rng.matrix(n, c, 0.8).cast<double>();
        const MatrixD targets = rng.matrix(n, 3, 1.5).cast<double>();
        std::vector<uint8_t> fg(n), labels(n);
        for (int64_t i = 0; i < n; ++i) {
            fg[i] = rng.integer(0, 1) ? 1 : 0;
            labels[i] = fg[i];
        }
        fg[0] = 1;
        labels[0] = 1;

        const VoteGradients grads = vote_backward(features, targets, fg, labels, w);

        auto loss_at = [&](const VoteModuleWeights& probe) {
            const VoteOutput fwd = vote_forward(features, probe);
            return vote_loss(fwd.offsets, targets, fg) +
                   focal_objectness_loss(fwd.objectness, labels);
        };

        struct Param {
            double* value;
            const double* grad;
        };
        VoteModuleWeights probe = w;
        std::vector<Param> params;
        auto add_mat = [&](MatrixD& pm, const MatrixD& gm) {
            for (int64_t i = 0; i < pm.size(); ++i) params.push_back({pm.data() + i, gm.data() + i});
        };
        auto add_vec = [&](VectorD& pv, const VectorD& gv) {
            for (int64_t i = 0; i < pv.size(); ++i) params.push_back({pv.data() + i, gv.data() + i});
        };
        add_mat(probe.offset_w1, grads.param.offset_w1);
        add_vec(probe.offset_b1, grads.param.offset_b1);
        add_mat(probe.offset_w2, grads.param.offset_w2);
        add_vec(probe.offset_b2, grads.param.offset_b2);
        add_mat(probe.obj_w1, grads.param.obj_w1);
        add_vec(probe.obj_b1, grads.param.obj_b1);
        add_mat(probe.obj_w2, grads.param.obj_w2);
        add_vec(probe.obj_b2, grads.param.obj_b2);

        const double h_step = 1e-4;
        int checked = 0;
        for (size_t step = 0; step < params.size() && checked < 64; step += 7, ++checked) {
            auto& p = params[step];
            const double saved = *p.value;
            *p.value = saved + h_step;
            const double up = loss_at(probe);
            *p.value = saved - h_step;
            const double down = loss_at(probe);
            *p.value = saved;
            const double fd = (up - down) / (2.0 * h_step);
            const double an = *p.grad;
            const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            ck.expect(err < 1e-4, "finite-difference mismatch at parameter " +
                                      std::to_string(step) + " (rel err " + std::to_string(err) +
                                      ")");
        }
        ck.expect(checked >= 50, "fewer than 50 parameters checked");

        // Zero upstream gradient propagates to zero parameter gradients.
        const MatrixD zero_up = MatrixD::Zero(n, 3);
        const MlpGradients gz = mlp2_backward(features, w.offset_w1, w.offset_b1, w.offset_w2,
                                              w.offset_b2, zero_up);
        ck.expect(gz.w1.isZero(0.0) && gz.w2.isZero(0.0) && gz.b1.isZero(0.0) &&
                      gz.b2.isZero(0.0) && gz.input.isZero(0.0),
                  "zero upstream gradient produced nonzero parameter gradients");

        // A weight feeding a dead ReLU region gets a zero gradient.
        VoteModuleWeights dead = w;
        dead.obj_b1.setConstant(-100.0);  // hidden pre-activations all negative
        const VoteGradients gd = vote_backward(features, targets, fg, labels, dead);
        ck.expect(gd.param.obj_w1.isZero(0.0), "gradient reached a weight behind a dead ReLU");
    }
    return ck.finish("vote-math", start);
}

CheckResult check_voting_end_to_end() {
    const auto start = Clock::now();
    Checker ck;

    PipelineConfig cfg = small_config();
    cfg.voxelization = make_spec({{-40.0, -40.0, -2.0}, {40.0, 40.0, 4.0}},
                                 {0.4, 0.4, 0.6});
    const ModelWeights weights = init_weights(cfg, 42);

    for (int scene_idx = 0; scene_idx < 20; ++scene_idx) {
        SceneParams params;
        params.seed = 5000 + scene_idx;
        params.num_boxes = 10;
        params.points_per_box = 500;
        params.ground_points = 6000;
        const SyntheticScene scene = generate_scene(params, cfg.voxelization.voxel_size);
        const SparseVoxelGrid refined =
            voxelize(crop_points(scene.cloud, params.range), cfg.voxelization, cfg.channels);

        const VoteTargets targets = assign_targets(refined.coords(), cfg.voxelization,
                                                   scene.boxes);

        // Box-center voxels, and which of them are empty in the refined grid.
        std::vector<VoxelCoord> center_voxels;
        for (const auto& box : scene.boxes) {
            VoxelCoord c;
            c.b = refined.batch();
            int32_t* axes[3] = {&c.x, &c.y, &c.z};
            for (int a = 0; a < 3; ++a) {
                *axes[a] = static_cast<int32_t>(
                    std::floor((box.center[a] - double(cfg.voxelization.origin[a])) /
                               double(cfg.voxelization.voxel_size[a])));
            }
            center_voxels.push_back(c);
        }

        std::vector<int64_t> fg_per_box(scene.boxes.size(), 0);
        for (size_t i = 0; i < targets.fg.size(); ++i) {
            if (targets.fg[i]) fg_per_box[static_cast<size_t>(targets.box_index[i])] += 1;
        }
        for (size_t b = 0; b < scene.boxes.size(); ++b) {
            ck.expect(fg_per_box[b] >= 1, "a box has no foreground seeds (degenerate scene)");
        }

        const VoteSet votes = generate_votes_oracle(refined, targets.fg, targets.offsets);
        const SparseVoxelGrid vote_grid = revoxelize_votes(votes, refined.extent(),
                                                           refined.batch(), cfg.channels);

        // Every vote voxel contains some ground-truth box center.
        std::set<std::array<int32_t, 3>> center_cells;
        for (const auto& c : center_voxels) center_cells.insert({c.x, c.y, c.z});
        for (const auto& c : vote_grid.coords()) {
            ck.expect(center_cells.count({c.x, c.y, c.z}) == 1,
                      "a vote voxel does not contain a box center");
        }

        const SparseVoxelGrid enriched = context_aggregate(vote_grid, refined, cfg,
                                                           weights.context);
        const SparseVoxelGrid merged = merge_voxels(enriched, refined, cfg.vote.merge_rule);

        // Inserted >= 1 voxel per box whose center voxel was empty.
        for (size_t b = 0; b < scene.boxes.size(); ++b) {
            if (refined.lookup(center_voxels[b])) continue;  // already occupied
            ck.expect(merged.lookup(center_voxels[b]).has_value(),
                      "no voxel inserted at an empty box-center site");
        }
        // Never removes: coords(refined) subset of coords(merged).
        bool all_present = merged.size() >= refined.size();
        for (const auto& c : refined.coords()) {
            all_present = all_present && merged.lookup(c).has_value();
        }
        ck.expect(all_present, "merge dropped a refined voxel");
    }
    return ck.finish("voting-end-to-end", start);
}

CheckResult check_cbs_efficiency() {
    const auto start = Clock::now();
    Checker ck;

    // Synthetic scene with >= 50k non-empty voxels.
    SceneParams params;
    params.range = {{-48.0, -48.0, -2.0}, {48.0, 48.0, 4.0}};
    params.num_boxes = 40;
    params.points_per_box = 1500;
    params.ground_points = 260000;
    params.min_center_gap = 6.0;
    params.seed = 99;

    PipelineConfig cfg = small_config();
    cfg.voxelization = make_spec(params.range, {0.4, 0.4, 0.6});
    cfg.threads = 0;  // use every core; per-voxel results are schedule-independent

    const SyntheticScene scene = generate_scene(params, cfg.voxelization.voxel_size);
    const SparseVoxelGrid grid =
        voxelize(crop_points(scene.cloud, params.range), cfg.voxelization, cfg.channels);
    ck.expect(grid.size() >= 50000,
              "scene has only " + std::to_string(grid.size()) + " voxels (need >= 50k)");

    const ModelWeights weights = init_weights(cfg, 1234);

    auto timed_run = [&](CbsRate rate, ForwardStats& stats) {
        PipelineConfig run_cfg = cfg;
        run_cfg.cbs = ChessboardSpec::with_rate(rate);
        const auto t0 = Clock::now();
        backbone_forward(grid, run_cfg, weights, &stats);
        return seconds_since(t0);
    };

    ForwardStats stats_off, stats_quarter;
    const double t_off = timed_run(CbsRate::off, stats_off);
    const double t_quarter = timed_run(CbsRate::quarter, stats_quarter);

    ck.expect(stats_off.attention_queries ==
                  uint64_t(cfg.num_blocks) * uint64_t(grid.size()),
              "no-sampling query count is not blocks * N");
    // Four blocks cycle the four symbols, so each voxel is attended exactly
    // once: the reduction is exactly 4x.
    ck.expect(stats_off.attention_queries == 4 * stats_quarter.attention_queries,
              "1/4 sampling did not cut attention queries by 4x (got " +
                  std::to_string(stats_off.attention_queries) + " vs " +
                  std::to_string(stats_quarter.attention_queries) + ")");
    ck.expect(t_quarter <= 0.75 * t_off,
              "1/4 sampling saved less than 25% wall time (" + std::to_string(t_off) + "s -> " +
                  std::to_string(t_quarter) + "s)");
    const double elapsed = seconds_since(start);
    ck.expect(elapsed < 120.0, "efficiency check exceeded its 2-minute budget");

    std::ostringstream note;
    note << "N=" << grid.size() << ", off " << int(t_off * 1000) << "ms -> 1/4 "
         << int(t_quarter * 1000) << "ms, queries " << stats_off.attention_queries << " -> "
         << stats_quarter.attention_queries;
    return ck.finish("cbs-efficiency", start, note.str());
}

CheckResult check_determinism() {
    const auto start = Clock::now();
    Checker ck;

    SceneParams params;
    params.num_boxes = 6;
    params.points_per_box = 300;
    params.ground_points = 4000;
    params.seed = 321;

    PipelineConfig cfg = small_config();
    cfg.voxelization = make_spec(params.range, {0.4, 0.4, 0.6});

    auto run_pipeline = [&](int threads) {
        PipelineConfig run_cfg = cfg;
        run_cfg.threads = threads;
        const SyntheticScene scene = generate_scene(params, run_cfg.voxelization.voxel_size);
        const SparseVoxelGrid grid = voxelize(crop_points(scene.cloud, params.range),
                                              run_cfg.voxelization, run_cfg.channels);
        const ModelWeights weights = init_weights(run_cfg, run_cfg.seed);
        const SparseVoxelGrid refined = backbone_forward(grid, run_cfg, weights);
        const VoteSet votes = generate_votes(refined, weights.vote, run_cfg.vote.threshold);
        const SparseVoxelGrid vote_grid =
            revoxelize_votes(votes, refined.extent(), refined.batch(), run_cfg.channels);
        const SparseVoxelGrid enriched =
            context_aggregate(vote_grid, refined, run_cfg, weights.context);
        return merge_voxels(enriched, refined, run_cfg.vote.merge_rule);
    };

    const SparseVoxelGrid a = run_pipeline(1);
    const SparseVoxelGrid b = run_pipeline(1);
    ck.expect(grid_bytes(a) == grid_bytes(b), "two single-thread runs are not bit-identical");

    const SparseVoxelGrid c = run_pipeline(8);
    ck.expect(a.coords() == c.coords(), "threaded run changed the voxel set");
    bool within = a.size() == c.size();
    for (int64_t i = 0; within && i < a.features().size(); ++i) {
        const double av = a.features().data()[i];
        const double cv = c.features().data()[i];
        within = std::abs(av - cv) <= 1e-6 * std::max(1.0, std::abs(av));
    }
    ck.expect(within, "threaded run differs beyond 1e-6");
    return ck.finish("determinism", start);
}

CheckResult check_weights_file(const std::string& path, const std::string& config_path) {
    const auto start = Clock::now();
    Checker ck;
    try {
        const PipelineConfig cfg =
            config_path.empty() ? PipelineConfig{} : load_config(config_path);
        const ModelWeights w = load_weights(path, cfg);
        auto finite_block = [](const BlockWeights& b) {
            bool ok = b.w_q.allFinite() && b.ffn_w1.allFinite() && b.ffn_w2.allFinite() &&
                      b.ffn_b1.allFinite() && b.ffn_b2.allFinite() && b.ln_gamma.allFinite() &&
                      b.ln_beta.allFinite();
            for (const auto& m : b.w_k) ok = ok && m.allFinite();
            for (const auto& m : b.w_v) ok = ok && m.allFinite();
            for (const auto& m : b.rpe_table) ok = ok && m.allFinite();
            return ok;
        };
        bool ok = true;
        for (const auto& b : w.blocks) ok = ok && finite_block(b);
        ok = ok && finite_block(w.pillar) && finite_block(w.context);
        ok = ok && w.vote.offset_w1.allFinite() && w.vote.obj_w1.allFinite();
        ck.expect(ok, "weights contain non-finite values");
    } catch (const std::exception& e) {
        ck.expect(false, e.what());
    }
    return ck.finish("weights-container", start);
}

std::vector<CheckResult> run_suite(const std::string& filter) {
    using CheckFn = CheckResult (*)();
    const std::pair<const char*, CheckFn> checks[] = {
        {"hash-gather-equivalence", check_hash_gather_equivalence},
        {"window-partition", check_window_partition},
        {"fps-oracle", check_fps_oracle},
        {"cbs-coverage", check_cbs_coverage},
        {"attention-oracle", check_attention_oracle},
        {"block-oracle", check_block_oracle},
        {"vote-math", check_vote_math},
        {"voting-end-to-end", check_voting_end_to_end},
        {"cbs-efficiency", check_cbs_efficiency},
        {"determinism", check_determinism},
    };
    std::vector<CheckResult> results;
    for (const auto& [name, fn] : checks) {
        if (!filter.empty() && std::string(name).find(filter) == std::string::npos) continue;
        results.push_back(fn());
    }
    return results;
}

}  // namespace msvt::selfcheck
