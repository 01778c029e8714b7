#include "msvt/backbone.hpp"

#include "msvt/parallel.hpp"
#include "msvt/sampling.hpp"
#include "msvt/windowing.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>

namespace msvt {

namespace {

// Self-contained uniform draw so init is reproducible regardless of the
// standard library's distribution implementations.
class InitRng {
public:
    explicit InitRng(uint64_t seed) : gen_(seed) {}

    float uniform(float lo, float hi) {
        const double u = double(gen_() >> 11) * 0x1.0p-53;
        return static_cast<float>(lo + u * (double(hi) - double(lo)));
    }

    MatrixF xavier(int64_t rows, int64_t cols) {
        const float limit = std::sqrt(6.0f / float(rows + cols));
        MatrixF m(rows, cols);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < cols; ++c) m(r, c) = uniform(-limit, limit);
        }
        return m;
    }

private:
    std::mt19937_64 gen_;
};

BlockWeights init_block(InitRng& rng, const HeadGroupConfig& hc, int ffn_hidden_mult,
                        const std::array<int32_t, 3>& r_max) {
    const int c = hc.channels;
    const int width = hc.group_width();
    const int hidden = c * ffn_hidden_mult;

    BlockWeights w;
    w.r_max = r_max;
    w.w_q = rng.xavier(c, c);
    for (int m = 0; m < hc.groups(); ++m) {
        w.w_k.push_back(rng.xavier(c, width));
        w.w_v.push_back(rng.xavier(c, width));
        // Zero start keeps the bias path orthogonal in tests.
        w.rpe_table.push_back(MatrixF::Zero(width, rpe_table_entries(r_max)));
    }
    w.ffn_w1 = rng.xavier(c, hidden);
    w.ffn_b1 = VectorF::Zero(hidden);
    w.ffn_w2 = rng.xavier(hidden, c);
    w.ffn_b2 = VectorF::Zero(c);
    w.ln_gamma = VectorF::Ones(c);
    w.ln_beta = VectorF::Zero(c);
    return w;
}

// Vote weights live in float64; quantize each draw to float32 so the
// container (float32) round-trips bit-identically.
MatrixD xavier_f64(InitRng& rng, int64_t rows, int64_t cols) {
    const float limit = std::sqrt(6.0f / float(rows + cols));
    MatrixD m(rows, cols);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) m(r, c) = double(rng.uniform(-limit, limit));
    }
    return m;
}

void validate_block_weights(const BlockWeights& w, const HeadGroupConfig& hc,
                            int ffn_hidden_mult, const std::array<int32_t, 3>& r_max,
                            const char* which) {
    const int c = hc.channels;
    const int width = hc.group_width();
    const auto fail = [&](const std::string& detail) {
        throw std::invalid_argument(std::string("weights[") + which + "]: " + detail);
    };
    if (w.w_q.rows() != c || w.w_q.cols() != c) fail("W_Q must be C x C");
    if (static_cast<int>(w.w_k.size()) != hc.groups() ||
        static_cast<int>(w.w_v.size()) != hc.groups() ||
        static_cast<int>(w.rpe_table.size()) != hc.groups()) {
        fail("per-group tensor count must equal the group count");
    }
    if (w.r_max != r_max) fail("r_max does not match the configured key windows");
    const int64_t entries = rpe_table_entries(r_max);
    for (int m = 0; m < hc.groups(); ++m) {
        if (w.w_k[m].rows() != c || w.w_k[m].cols() != width) fail("W_K must be C x C/M");
        if (w.w_v[m].rows() != c || w.w_v[m].cols() != width) fail("W_V must be C x C/M");
        if (w.rpe_table[m].rows() != width || w.rpe_table[m].cols() != entries) {
            fail("position table must be (C/M) x R");
        }
    }
    const int hidden = c * ffn_hidden_mult;
    if (w.ffn_w1.rows() != c || w.ffn_w1.cols() != hidden || w.ffn_b1.size() != hidden ||
        w.ffn_w2.rows() != hidden || w.ffn_w2.cols() != c || w.ffn_b2.size() != c ||
        w.ln_gamma.size() != c || w.ln_beta.size() != c) {
        fail("FFN/LN shapes do not match C and the hidden multiplier");
    }
}

}  // namespace

ModelWeights init_weights(const PipelineConfig& cfg, uint64_t seed) {
    cfg.validate();
    InitRng rng(seed);
    const HeadGroupConfig hc = cfg.head_config();
    const auto r_max = cfg.largest_key_window();

    ModelWeights w;
    for (int b = 0; b < cfg.num_blocks; ++b) {
        w.blocks.push_back(init_block(rng, hc, cfg.ffn_hidden_mult, r_max));
    }
    w.pillar = init_block(rng, hc, cfg.ffn_hidden_mult,
                          {1, 1, cfg.voxelization.extent.z});
    w.context = init_block(rng, hc, cfg.ffn_hidden_mult, r_max);

    const int c = cfg.channels;
    const int h = cfg.vote.hidden;
    w.vote.offset_w1 = xavier_f64(rng, c, h);
    w.vote.offset_b1 = VectorD::Zero(h);
    w.vote.offset_w2 = xavier_f64(rng, h, 3);
    w.vote.offset_b2 = VectorD::Zero(3);
    w.vote.obj_w1 = xavier_f64(rng, c, h);
    w.vote.obj_b1 = VectorD::Zero(h);
    w.vote.obj_w2 = xavier_f64(rng, h, 1);
    w.vote.obj_b2 = VectorD::Zero(1);
    return w;
}

SparseVoxelGrid mssvt_block_forward(const SparseVoxelGrid& grid, int block_index,
                                    const PipelineConfig& cfg, const BlockWeights& w,
                                    ForwardStats* stats) {
    cfg.validate();
    validate_block_weights(w, cfg.head_config(), cfg.ffn_hidden_mult, cfg.largest_key_window(),
                           "block");
    if (grid.channels() != cfg.channels && grid.size() > 0) {
        throw std::invalid_argument("block forward: grid has " +
                                    std::to_string(grid.channels()) + " channels, config wants " +
                                    std::to_string(cfg.channels));
    }

    SparseVoxelGrid out = grid;
    if (grid.size() == 0) return out;

    const WindowSet windows = partition_query_windows(grid, cfg.query_window);
    MatrixF next = grid.features();  // unsampled windows pass through
    const HeadGroupConfig hc = cfg.head_config();
    const int groups = hc.groups();
    const int width = hc.group_width();
    const bool cbs_on = cfg.cbs.rate != CbsRate::off;

    std::atomic<uint64_t> attention_queries{0};
    std::atomic<uint64_t> interpolated_queries{0};
    std::atomic<uint64_t> passthrough_windows{0};
    std::vector<std::atomic<uint64_t>> keys_per_scale(groups);

    parallel_for(windows.size(), cfg.threads, [&](int64_t j) {
        const auto& members = windows.members[j];

        std::vector<int32_t> sampled;
        std::vector<int32_t> unsampled;
        if (cbs_on) {
            std::tie(sampled, unsampled) =
                sample_queries_cbs(members, grid.coords(), block_index, cfg.cbs);
        } else {
            sampled = members;
        }
        if (sampled.empty()) {
            // Off-cycle window: features pass through unchanged this block.
            passthrough_windows.fetch_add(1, std::memory_order_relaxed);
            return;
        }

        const KeySampleSet keys =
            balanced_multiwindow_sample(grid, windows.centers[j], cfg.key_windows, cfg.n_pool,
                                        cfg.n_keys, cfg.linear_scan_gather);

        const int64_t ns = static_cast<int64_t>(sampled.size());
        MatrixF f0(ns, cfg.channels);
        std::vector<std::array<int32_t, 3>> x0(sampled.size());
        for (int64_t i = 0; i < ns; ++i) {
            f0.row(i) = grid.features().row(sampled[i]);
            x0[i] = grid.coords()[sampled[i]].xyz();
        }

        std::vector<MatrixF> fm(groups);
        for (int m = 0; m < groups; ++m) fm[m] = keys.scales[m].features;
        const ProjectedQkv proj = project_qkv(f0, fm, w);

        std::vector<MatrixF> group_out(groups);
        for (int m = 0; m < groups; ++m) {
            const auto& scale = keys.scales[m];
            keys_per_scale[m].fetch_add(scale.coords.size(), std::memory_order_relaxed);
            if (scale.coords.empty()) {
                group_out[m] = MatrixF::Zero(ns, width);
                continue;
            }
            const MatrixF qm = proj.q.middleCols(int64_t(m) * width, width);
            const MatrixI index = relative_position_index(x0, scale.coords, w.r_max);
            const MatrixF bq = rpe_bias(qm, w.rpe_table[m], index, RpeSide::query);
            const MatrixF bk = rpe_bias(proj.k[m], w.rpe_table[m], index, RpeSide::key);
            group_out[m] = scale_aware_attention(qm, proj.k[m], proj.v[m], bq, bk,
                                                 hc.heads_per_group[m]);
        }

        const MatrixF updated = merge_heads_ffn(group_out, w);
        for (int64_t i = 0; i < ns; ++i) next.row(sampled[i]) = updated.row(i);
        attention_queries.fetch_add(sampled.size(), std::memory_order_relaxed);

        if (!unsampled.empty()) {
            std::vector<std::array<int32_t, 3>> ux(unsampled.size());
            MatrixF uf(static_cast<int64_t>(unsampled.size()), cfg.channels);
            for (size_t i = 0; i < unsampled.size(); ++i) {
                ux[i] = grid.coords()[unsampled[i]].xyz();
                uf.row(static_cast<int64_t>(i)) = grid.features().row(unsampled[i]);
            }
            // Interpolation reads the *updated* sampled features.
            const auto interp = knn_interpolate(ux, uf, x0, updated, cfg.knn_k);
            for (size_t i = 0; i < unsampled.size(); ++i) {
                next.row(unsampled[i]) = interp.features.row(static_cast<int64_t>(i));
            }
            interpolated_queries.fetch_add(unsampled.size(), std::memory_order_relaxed);
        }
    });

    if (stats) {
        stats->attention_queries += attention_queries.load();
        stats->interpolated_queries += interpolated_queries.load();
        stats->windows += windows.size();
        stats->passthrough_windows += passthrough_windows.load();
        if (stats->keys_per_scale.size() < keys_per_scale.size()) {
            stats->keys_per_scale.resize(keys_per_scale.size(), 0);
        }
        for (size_t m = 0; m < keys_per_scale.size(); ++m) {
            stats->keys_per_scale[m] += keys_per_scale[m].load();
        }
    }

    out.set_features(std::move(next));
    return out;
}

SparseVoxelGrid backbone_forward(const SparseVoxelGrid& grid, const PipelineConfig& cfg,
                                 const ModelWeights& weights, ForwardStats* stats) {
    if (static_cast<int>(weights.blocks.size()) != cfg.num_blocks) {
        throw std::invalid_argument("backbone forward: have " +
                                    std::to_string(weights.blocks.size()) +
                                    " block weight sets, config wants " +
                                    std::to_string(cfg.num_blocks));
    }
    SparseVoxelGrid current = grid;
    for (int t = 0; t < cfg.num_blocks; ++t) {
        current = mssvt_block_forward(current, t, cfg, weights.blocks[t], stats);
    }
    return current;
}

}  // namespace msvt
