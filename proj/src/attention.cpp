#include "msvt/attention.hpp"

#include "msvt/parallel.hpp"
#include "msvt/windowing.hpp"

#include <cmath>
#include <stdexcept>

namespace msvt {

void HeadGroupConfig::validate() const {
    if (channels < 1) throw std::invalid_argument("head config: channels must be >= 1");
    if (heads_per_group.empty()) {
        throw std::invalid_argument("head config: need at least one head group");
    }
    if (channels % groups() != 0) {
        throw std::invalid_argument("head config: channels (" + std::to_string(channels) +
                                    ") not divisible by group count (" +
                                    std::to_string(groups()) + ")");
    }
    for (int h : heads_per_group) {
        if (h < 1) throw std::invalid_argument("head config: heads per group must be >= 1");
        if (group_width() % h != 0) {
            throw std::invalid_argument("head config: group width " +
                                        std::to_string(group_width()) +
                                        " not divisible by " + std::to_string(h) + " heads");
        }
    }
}

int64_t rpe_table_entries(const std::array<int32_t, 3>& r_max) {
    int64_t r = 1;
    for (int a = 0; a < 3; ++a) {
        if (r_max[a] < 1) throw std::invalid_argument("rpe table: r_max must be >= 1 per axis");
        r *= 2 * int64_t(r_max[a]) - 1;
    }
    return r;
}

int64_t BlockWeights::rpe_entries() const { return rpe_table_entries(r_max); }

ProjectedQkv project_qkv(const MatrixF& f0, std::span<const MatrixF> fm, const BlockWeights& w) {
    const int64_t c = w.w_q.rows();
    if (w.w_q.cols() != c || f0.cols() != c) {
        throw std::invalid_argument("project_qkv: query features must be N_q x C with W_Q C x C");
    }
    if (fm.size() != w.w_k.size() || fm.size() != w.w_v.size()) {
        throw std::invalid_argument("project_qkv: scale count mismatch with weights");
    }

    ProjectedQkv out;
    out.q = (f0.cast<double>() * w.w_q.cast<double>()).cast<float>();
    out.k.resize(fm.size());
    out.v.resize(fm.size());
    for (size_t m = 0; m < fm.size(); ++m) {
        if (w.w_k[m].rows() != c || w.w_v[m].rows() != c || fm[m].cols() != c) {
            throw std::invalid_argument("project_qkv: key features at scale " +
                                        std::to_string(m) + " must have C columns");
        }
        out.k[m] = (fm[m].cast<double>() * w.w_k[m].cast<double>()).cast<float>();
        out.v[m] = (fm[m].cast<double>() * w.w_v[m].cast<double>()).cast<float>();
    }
    return out;
}

MatrixI relative_position_index(std::span<const std::array<int32_t, 3>> query_coords,
                                std::span<const std::array<int32_t, 3>> key_coords,
                                const std::array<int32_t, 3>& r_max) {
    const int64_t dy = 2 * int64_t(r_max[1]) - 1;
    const int64_t dz = 2 * int64_t(r_max[2]) - 1;

    MatrixI index(static_cast<int64_t>(query_coords.size()),
                  static_cast<int64_t>(key_coords.size()));
    for (int64_t q = 0; q < index.rows(); ++q) {
        for (int64_t k = 0; k < index.cols(); ++k) {
            int64_t flat = 0;
            const int64_t strides[3] = {dy * dz, dz, 1};
            for (int a = 0; a < 3; ++a) {
                const int32_t delta = key_coords[k][a] - query_coords[q][a];
                if (delta <= -r_max[a] || delta >= r_max[a]) {
                    throw std::out_of_range(
                        "relative_position_index: |delta| " + std::to_string(std::abs(delta)) +
                        " exceeds r_max-1 on axis " + std::to_string(a) +
                        " (keys must come from windows nested in r_max)");
                }
                flat += int64_t(delta + r_max[a] - 1) * strides[a];
            }
            index(q, k) = static_cast<int32_t>(flat);
        }
    }
    return index;
}

MatrixF rpe_bias(const MatrixF& a, const MatrixF& table, const MatrixI& index, RpeSide side) {
    const int64_t width = table.rows();
    const int64_t entries = table.cols();
    if (a.cols() != width) {
        throw std::invalid_argument("rpe_bias: feature width must match table rows");
    }
    const int64_t rows_needed = side == RpeSide::query ? index.rows() : index.cols();
    if (a.rows() != rows_needed) {
        throw std::invalid_argument("rpe_bias: row count must match the indexed side");
    }

    // B[q,k] is one entry of A * T; computing only the gathered entries keeps
    // the math identical while skipping the (mostly unused) N x R product.
    MatrixF bias(index.rows(), index.cols());
    for (int64_t q = 0; q < index.rows(); ++q) {
        for (int64_t k = 0; k < index.cols(); ++k) {
            const int32_t idx = index(q, k);
            if (idx < 0 || idx >= entries) {
                throw std::out_of_range("rpe_bias: index " + std::to_string(idx) +
                                        " outside table with " + std::to_string(entries) +
                                        " entries");
            }
            const int64_t row = side == RpeSide::query ? q : k;
            double acc = 0.0;
            for (int64_t c = 0; c < width; ++c) {
                acc += double(a(row, c)) * double(table(c, idx));
            }
            bias(q, k) = static_cast<float>(acc);
        }
    }
    return bias;
}

MatrixF scale_aware_attention(const MatrixF& q_group, const MatrixF& k, const MatrixF& v,
                              const MatrixF& bias_q, const MatrixF& bias_k, int heads) {
    const int64_t nq = q_group.rows();
    const int64_t nk = k.rows();
    const int64_t width = q_group.cols();
    if (heads < 1 || width % heads != 0) {
        throw std::invalid_argument("attention: group width must divide into heads");
    }
    if (nk == 0) return MatrixF::Zero(nq, width);  // empty scale contributes nothing
    if (k.cols() != width || v.cols() != width || v.rows() != nk) {
        throw std::invalid_argument("attention: K/V shape mismatch");
    }
    if (bias_q.rows() != nq || bias_q.cols() != nk || bias_k.rows() != nq ||
        bias_k.cols() != nk) {
        throw std::invalid_argument("attention: bias shape must be N_q x N_k");
    }

    const MatrixD qd = q_group.cast<double>();
    const MatrixD kd = k.cast<double>();
    const MatrixD vd = v.cast<double>();
    const MatrixD bias = bias_q.cast<double>() + bias_k.cast<double>();
    const double scale = 1.0 / std::sqrt(double(width));
    const int64_t head_width = width / heads;

    MatrixD out(nq, width);
    for (int h = 0; h < heads; ++h) {
        const auto qh = qd.middleCols(h * head_width, head_width);
        const auto kh = kd.middleCols(h * head_width, head_width);
        const auto vh = vd.middleCols(h * head_width, head_width);
        MatrixD logits = qh * kh.transpose() * scale + bias;
        if (!logits.allFinite()) {
            throw std::runtime_error("attention: non-finite logits");
        }
        for (int64_t q = 0; q < nq; ++q) {
            auto row = logits.row(q);
            const double peak = row.maxCoeff();
            row = (row.array() - peak).exp();
            row /= row.sum();
        }
        out.middleCols(h * head_width, head_width) = logits * vh;
    }
    return out.cast<float>();
}

namespace {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

MatrixF merge_heads_ffn(std::span<const MatrixF> group_outputs, const BlockWeights& w) {
    if (group_outputs.empty()) throw std::invalid_argument("merge_heads_ffn: no group outputs");
    const int64_t nq = group_outputs[0].rows();
    int64_t channels = 0;
    for (const auto& g : group_outputs) {
        if (g.rows() != nq) throw std::invalid_argument("merge_heads_ffn: ragged group outputs");
        channels += g.cols();
    }
    if (channels != w.ln_gamma.size() || channels != w.ffn_w1.rows() ||
        w.ffn_w1.cols() != w.ffn_b1.size() || w.ffn_w2.rows() != w.ffn_b1.size() ||
        w.ffn_w2.cols() != channels || w.ffn_b2.size() != channels ||
        w.ln_beta.size() != channels) {
        throw std::invalid_argument("merge_heads_ffn: FFN/LN weight shapes do not match C");
    }

    MatrixD merged(nq, channels);
    int64_t col = 0;
    for (const auto& g : group_outputs) {
        merged.middleCols(col, g.cols()) = g.cast<double>();
        col += g.cols();
    }

    constexpr double kLnEps = 1e-5;
    MatrixD normed(nq, channels);
    for (int64_t r = 0; r < nq; ++r) {
        const auto row = merged.row(r);
        const double mean = row.mean();
        const double var = (row.array() - mean).square().sum() / double(channels);
        normed.row(r) = (((row.array() - mean) / std::sqrt(var + kLnEps)) *
                             w.ln_gamma.cast<double>().transpose().array() +
                         w.ln_beta.cast<double>().transpose().array())
                            .matrix();
    }

    MatrixD hidden = normed * w.ffn_w1.cast<double>();
    hidden.rowwise() += w.ffn_b1.cast<double>().transpose();
    hidden = hidden.unaryExpr([](double x) { return gelu(x); });
    MatrixD mlp = hidden * w.ffn_w2.cast<double>();
    mlp.rowwise() += w.ffn_b2.cast<double>().transpose();

    return (mlp + merged).cast<float>();
}

BevMap pillar_compress(const SparseVoxelGrid& grid, const BlockWeights& w,
                       const HeadGroupConfig& cfg, int threads) {
    cfg.validate();
    const int channels = cfg.channels;
    if (grid.channels() != channels) {
        throw std::invalid_argument("pillar_compress: grid channel count " +
                                    std::to_string(grid.channels()) + " != configured " +
                                    std::to_string(channels));
    }
    const WindowSpec pillar{{1, 1, grid.extent().z}};
    const WindowSet pillars = partition_query_windows(grid, pillar);

    BevMap bev;
    bev.extent = grid.extent();
    bev.cells.resize(pillars.size());
    bev.features.resize(pillars.size(), channels);

    parallel_for(pillars.size(), threads, [&](int64_t j) {
        const auto& members = pillars.members[j];
        bev.cells[j] = {pillars.cells[j][0], pillars.cells[j][1]};

        // The query is the pillar's mean voxel feature.
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(channels);
        for (int32_t idx : members) mean += grid.features().row(idx).cast<double>().transpose();
        mean /= double(members.size());
        MatrixF f0 = mean.cast<float>().transpose();

        const auto hits = gather_window_voxels(grid, pillars.centers[j], pillar,
                                               std::numeric_limits<int64_t>::max());
        MatrixF key_feats(static_cast<int64_t>(hits.size()), channels);
        std::vector<std::array<int32_t, 3>> key_coords(hits.size());
        for (size_t i = 0; i < hits.size(); ++i) {
            key_feats.row(static_cast<int64_t>(i)) = grid.features().row(hits[i]);
            key_coords[i] = grid.coords()[hits[i]].xyz();
        }

        // Both scales degenerate to the pillar itself.
        std::vector<MatrixF> fm(cfg.groups(), key_feats);
        const ProjectedQkv proj = project_qkv(f0, fm, w);

        // Query coordinate = pillar base, so key deltas are (0, 0, z >= 0).
        const std::array<int32_t, 3> query_coord = {pillars.cells[j][0], pillars.cells[j][1], 0};
        const MatrixI index = relative_position_index(std::span(&query_coord, 1), key_coords,
                                                      w.r_max);

        std::vector<MatrixF> group_out(cfg.groups());
        const int width = cfg.group_width();
        for (int m = 0; m < cfg.groups(); ++m) {
            const MatrixF qm = proj.q.middleCols(int64_t(m) * width, width);
            const MatrixF bq = rpe_bias(qm, w.rpe_table[m], index, RpeSide::query);
            const MatrixF bk = rpe_bias(proj.k[m], w.rpe_table[m], index, RpeSide::key);
            group_out[m] = scale_aware_attention(qm, proj.k[m], proj.v[m], bq, bk,
                                                 cfg.heads_per_group[m]);
        }
        bev.features.row(j) = merge_heads_ffn(group_out, w).row(0);
    });
    return bev;
}

}  // namespace msvt
