#include "msvt/oracle.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace msvt::oracle {

namespace {

constexpr int64_t kMaxCells = 64 * 64 * 64;
constexpr int64_t kMaxVoxels = 5000;

std::array<int32_t, 3> box_low(const Eigen::Vector3d& center, const WindowSpec& r) {
    std::array<int32_t, 3> lo;
    for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<int32_t>(std::ceil(center[a] - double(r.size[a]) / 2.0));
    }
    return lo;
}

MatrixD matmul(const MatrixD& a, const MatrixD& b) {
    MatrixD out = MatrixD::Zero(a.rows(), b.cols());
    for (int64_t i = 0; i < a.rows(); ++i) {
        for (int64_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

}  // namespace

DenseGrid dense_from_sparse(const SparseVoxelGrid& grid) {
    if (grid.extent().volume() > kMaxCells) {
        throw std::invalid_argument("oracle: extent exceeds the 64^3 dense cap");
    }
    if (grid.size() > kMaxVoxels) {
        throw std::invalid_argument("oracle: voxel count exceeds the 5000 dense cap");
    }
    DenseGrid dense;
    dense.extent = grid.extent();
    dense.batch = grid.batch();
    dense.channels = grid.channels();
    dense.cell_index.assign(static_cast<size_t>(grid.extent().volume()), -1);
    dense.coords = grid.coords();
    dense.features = grid.features();
    for (int32_t i = 0; i < static_cast<int32_t>(dense.coords.size()); ++i) {
        const auto& c = dense.coords[i];
        dense.cell_index[static_cast<size_t>(dense.cell(c.x, c.y, c.z))] = i;
    }
    return dense;
}

SparseVoxelGrid dense_to_sparse(const DenseGrid& dense) {
    return build_hash(dense.extent, dense.coords, dense.features);
}

std::vector<int32_t> dense_window_gather(const DenseGrid& dense, const Eigen::Vector3d& center,
                                         const WindowSpec& r, int64_t cap) {
    const auto lo = box_low(center, r);
    std::vector<int32_t> hits;
    for (int32_t x = lo[0]; x < lo[0] + r.size[0]; ++x) {
        if (x < 0 || x >= dense.extent.x) continue;
        for (int32_t y = lo[1]; y < lo[1] + r.size[1]; ++y) {
            if (y < 0 || y >= dense.extent.y) continue;
            for (int32_t z = lo[2]; z < lo[2] + r.size[2]; ++z) {
                if (z < 0 || z >= dense.extent.z) continue;
                const int32_t idx = dense.cell_index[static_cast<size_t>(dense.cell(x, y, z))];
                if (idx < 0) continue;
                hits.push_back(idx);
                if (static_cast<int64_t>(hits.size()) >= cap) return hits;
            }
        }
    }
    return hits;
}

std::vector<int32_t> dense_fps(std::span<const std::array<int32_t, 3>> coords, int k) {
    if (k < 0) throw std::invalid_argument("dense_fps: k must be >= 0");
    const int32_t n = static_cast<int32_t>(coords.size());
    if (k == 0) return {};
    if (n == 0) throw std::invalid_argument("dense_fps: empty input with k > 0");

    int32_t seed = 0;
    for (int32_t i = 1; i < n; ++i) {
        if (coords[i] < coords[seed]) seed = i;
    }
    std::vector<int32_t> selected{seed};
    const int32_t take = std::min<int32_t>(k, n);

    while (static_cast<int32_t>(selected.size()) < take) {
        int32_t best = -1;
        int64_t best_dist = -1;
        for (int32_t i = 0; i < n; ++i) {
            // Recompute the distance to the chosen set from scratch.
            int64_t nearest = std::numeric_limits<int64_t>::max();
            for (int32_t s : selected) {
                const int64_t dx = coords[i][0] - coords[s][0];
                const int64_t dy = coords[i][1] - coords[s][1];
                const int64_t dz = coords[i][2] - coords[s][2];
                nearest = std::min(nearest, dx * dx + dy * dy + dz * dz);
            }
            if (nearest > best_dist) {
                best_dist = nearest;
                best = i;
            }
        }
        selected.push_back(best);
    }
    return selected;
}

MatrixD dense_attention(const MatrixD& q, const MatrixD& k, const MatrixD& v,
                        const MatrixD& bias_q, const MatrixD& bias_k, double scale) {
    const int64_t nq = q.rows();
    const int64_t nk = k.rows();
    const int64_t width = q.cols();
    MatrixD out = MatrixD::Zero(nq, v.cols());
    if (nk == 0) return out;

    for (int64_t i = 0; i < nq; ++i) {
        std::vector<double> logits(static_cast<size_t>(nk));
        double peak = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < nk; ++j) {
            double dot = 0.0;
            for (int64_t c = 0; c < width; ++c) dot += q(i, c) * k(j, c);
            logits[j] = dot * scale + bias_q(i, j) + bias_k(i, j);
            peak = std::max(peak, logits[j]);
        }
        double denom = 0.0;
        for (int64_t j = 0; j < nk; ++j) {
            logits[j] = std::exp(logits[j] - peak);
            denom += logits[j];
        }
        for (int64_t j = 0; j < nk; ++j) {
            const double weight = logits[j] / denom;
            for (int64_t c = 0; c < v.cols(); ++c) out(i, c) += weight * v(j, c);
        }
    }
    return out;
}

std::vector<std::vector<int32_t>> dense_relative_index(
    std::span<const std::array<int32_t, 3>> query_coords,
    std::span<const std::array<int32_t, 3>> key_coords, const std::array<int32_t, 3>& r_max) {
    const int64_t dy = 2 * int64_t(r_max[1]) - 1;
    const int64_t dz = 2 * int64_t(r_max[2]) - 1;
    std::vector<std::vector<int32_t>> index(query_coords.size());
    for (size_t qi = 0; qi < query_coords.size(); ++qi) {
        index[qi].resize(key_coords.size());
        for (size_t ki = 0; ki < key_coords.size(); ++ki) {
            const int64_t ox = key_coords[ki][0] - query_coords[qi][0] + r_max[0] - 1;
            const int64_t oy = key_coords[ki][1] - query_coords[qi][1] + r_max[1] - 1;
            const int64_t oz = key_coords[ki][2] - query_coords[qi][2] + r_max[2] - 1;
            if (ox < 0 || ox >= 2 * r_max[0] - 1 || oy < 0 || oy >= dy || oz < 0 || oz >= dz) {
                throw std::out_of_range("dense_relative_index: delta outside the table");
            }
            index[qi][ki] = static_cast<int32_t>(ox * dy * dz + oy * dz + oz);
        }
    }
    return index;
}

MatrixD dense_rpe_bias(const MatrixD& a, const MatrixD& table,
                       const std::vector<std::vector<int32_t>>& index, bool key_side) {
    const MatrixD product = matmul(a, table);  // N x R, then gather
    const int64_t nq = static_cast<int64_t>(index.size());
    const int64_t nk = nq > 0 ? static_cast<int64_t>(index[0].size()) : 0;
    MatrixD bias(nq, nk);
    for (int64_t q = 0; q < nq; ++q) {
        for (int64_t k = 0; k < nk; ++k) {
            bias(q, k) = product(key_side ? k : q, index[q][k]);
        }
    }
    return bias;
}

MatrixF dense_block_reference(const DenseGrid& dense, const WindowSpec& query_window,
                              std::span<const WindowSpec> key_windows,
                              std::span<const int> heads_per_group, const BlockWeights& w) {
    const int channels = dense.channels;
    const int groups = static_cast<int>(key_windows.size());
    const int width = channels / groups;

    // Brute-force grouping into query windows.
    std::map<std::array<int32_t, 3>, std::vector<int32_t>> windows;
    for (int32_t i = 0; i < static_cast<int32_t>(dense.coords.size()); ++i) {
        const auto& c = dense.coords[i];
        windows[{c.x / query_window.size[0], c.y / query_window.size[1],
                 c.z / query_window.size[2]}].push_back(i);
    }

    const MatrixD features = dense.features.cast<double>();
    MatrixF out(dense.features.rows(), channels);

    for (const auto& [cell, members] : windows) {
        const Eigen::Vector3d center((cell[0] + 0.5) * query_window.size[0],
                                     (cell[1] + 0.5) * query_window.size[1],
                                     (cell[2] + 0.5) * query_window.size[2]);
        const int64_t nq = static_cast<int64_t>(members.size());

        MatrixD f0(nq, channels);
        std::vector<std::array<int32_t, 3>> x0(members.size());
        for (int64_t i = 0; i < nq; ++i) {
            f0.row(i) = features.row(members[i]);
            x0[i] = dense.coords[members[i]].xyz();
        }
        const MatrixD q_full = matmul(f0, w.w_q.cast<double>());

        MatrixD merged(nq, channels);
        for (int m = 0; m < groups; ++m) {
            const auto hits = dense_window_gather(dense, center, key_windows[m]);
            std::vector<std::array<int32_t, 3>> hit_coords(hits.size());
            for (size_t i = 0; i < hits.size(); ++i) hit_coords[i] = dense.coords[hits[i]].xyz();
            const auto order = hits.empty()
                                   ? std::vector<int32_t>{}
                                   : dense_fps(hit_coords, static_cast<int>(hits.size()));

            const int64_t nk = static_cast<int64_t>(order.size());
            if (nk == 0) {
                merged.middleCols(int64_t(m) * width, width).setZero();
                continue;
            }
            MatrixD fk(nk, channels);
            std::vector<std::array<int32_t, 3>> xk(order.size());
            for (int64_t i = 0; i < nk; ++i) {
                fk.row(i) = features.row(hits[order[i]]);
                xk[i] = dense.coords[hits[order[i]]].xyz();
            }

            const MatrixD qm = q_full.middleCols(int64_t(m) * width, width);
            const MatrixD km = matmul(fk, w.w_k[m].cast<double>());
            const MatrixD vm = matmul(fk, w.w_v[m].cast<double>());
            const auto index = dense_relative_index(x0, xk, w.r_max);
            const MatrixD table = w.rpe_table[m].cast<double>();
            const MatrixD bq = dense_rpe_bias(qm, table, index, false);
            const MatrixD bk = dense_rpe_bias(km, table, index, true);

            const double scale = 1.0 / std::sqrt(double(width));
            const int heads = heads_per_group[m];
            const int64_t head_width = width / heads;
            for (int h = 0; h < heads; ++h) {
                const MatrixD qh = qm.middleCols(h * head_width, head_width);
                const MatrixD kh = km.middleCols(h * head_width, head_width);
                const MatrixD vh = vm.middleCols(h * head_width, head_width);
                merged.block(0, int64_t(m) * width + h * head_width, nq, head_width) =
                    dense_attention(qh, kh, vh, bq, bk, scale);
            }
        }

        // LN -> GELU MLP -> residual, all explicit.
        MatrixD y(nq, channels);
        for (int64_t i = 0; i < nq; ++i) {
            double mean = 0.0;
            for (int c = 0; c < channels; ++c) mean += merged(i, c);
            mean /= channels;
            double var = 0.0;
            for (int c = 0; c < channels; ++c) {
                var += (merged(i, c) - mean) * (merged(i, c) - mean);
            }
            var /= channels;
            const double denom = std::sqrt(var + 1e-5);
            for (int c = 0; c < channels; ++c) {
                y(i, c) = (merged(i, c) - mean) / denom * double(w.ln_gamma[c]) +
                          double(w.ln_beta[c]);
            }
        }
        MatrixD hidden = matmul(y, w.ffn_w1.cast<double>());
        for (int64_t i = 0; i < nq; ++i) {
            for (int64_t c = 0; c < hidden.cols(); ++c) {
                const double x = hidden(i, c) + double(w.ffn_b1[c]);
                hidden(i, c) = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
            }
        }
        MatrixD mlp = matmul(hidden, w.ffn_w2.cast<double>());
        for (int64_t i = 0; i < nq; ++i) {
            for (int c = 0; c < channels; ++c) mlp(i, c) += double(w.ffn_b2[c]);
        }

        for (int64_t i = 0; i < nq; ++i) {
            out.row(members[i]) = (mlp.row(i) + merged.row(i)).cast<float>();
        }
    }
    return out;
}

}  // namespace msvt::oracle
