#include "msvt/center_voting.hpp"

#include "msvt/parallel.hpp"
#include "msvt/sampling.hpp"
#include "msvt/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace msvt {

namespace {

void check_mlp_shapes(const VoteModuleWeights& w) {
    const int c = w.channels();
    const int h = w.hidden();
    if (w.offset_w2.rows() != h || w.offset_w2.cols() != 3 || w.offset_b1.size() != h ||
        w.offset_b2.size() != 3 || w.obj_w1.rows() != c || w.obj_w1.cols() != h ||
        w.obj_w2.rows() != h || w.obj_w2.cols() != 1 || w.obj_b1.size() != h ||
        w.obj_b2.size() != 1) {
        throw std::invalid_argument("vote weights: inconsistent MLP shapes");
    }
}

MatrixD mlp2_forward(const MatrixD& input, const MatrixD& w1, const VectorD& b1,
                     const MatrixD& w2, const VectorD& b2) {
    MatrixD hidden = input * w1;
    hidden.rowwise() += b1.transpose();
    hidden = hidden.cwiseMax(0.0);
    MatrixD out = hidden * w2;
    out.rowwise() += b2.transpose();
    return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kProbClamp = 1e-7;

}  // namespace

VoteOutput vote_forward(const MatrixD& features, const VoteModuleWeights& w) {
    check_mlp_shapes(w);
    if (features.cols() != w.channels()) {
        throw std::invalid_argument("vote_forward: feature width " +
                                    std::to_string(features.cols()) + " != weight channels " +
                                    std::to_string(w.channels()));
    }
    if (!features.allFinite()) throw std::runtime_error("vote_forward: non-finite features");

    VoteOutput out;
    out.offsets = mlp2_forward(features, w.offset_w1, w.offset_b1, w.offset_w2, w.offset_b2);
    const MatrixD logit = mlp2_forward(features, w.obj_w1, w.obj_b1, w.obj_w2, w.obj_b2);
    out.objectness.resize(features.rows());
    for (int64_t i = 0; i < features.rows(); ++i) out.objectness[i] = sigmoid(logit(i, 0));
    if (!out.offsets.allFinite()) throw std::runtime_error("vote_forward: non-finite offsets");
    return out;
}

double vote_loss(const MatrixD& offsets, const MatrixD& targets, std::span<const uint8_t> fg,
                 bool* no_foreground) {
    if (offsets.rows() != targets.rows() ||
        offsets.rows() != static_cast<int64_t>(fg.size()) || offsets.cols() != 3 ||
        targets.cols() != 3) {
        throw std::invalid_argument("vote_loss: shape mismatch");
    }
    double sum = 0.0;
    int64_t n_fg = 0;
    for (int64_t i = 0; i < offsets.rows(); ++i) {
        if (!fg[i]) continue;
        ++n_fg;
        sum += (offsets.row(i) - targets.row(i)).norm();
    }
    if (no_foreground) *no_foreground = (n_fg == 0);
    return n_fg == 0 ? 0.0 : sum / double(n_fg);
}

double focal_objectness_loss(const VectorD& p, std::span<const uint8_t> labels, double alpha,
                             double gamma) {
    if (p.size() != static_cast<int64_t>(labels.size())) {
        throw std::invalid_argument("focal loss: size mismatch");
    }
    if (p.size() == 0) return 0.0;
    double sum = 0.0;
    for (int64_t i = 0; i < p.size(); ++i) {
        const double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        const double pt = labels[i] ? pc : 1.0 - pc;
        const double at = labels[i] ? alpha : 1.0 - alpha;
        sum += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    return sum / double(p.size());
}

MlpGradients mlp2_backward(const MatrixD& input, const MatrixD& w1, const VectorD& b1,
                           const MatrixD& w2, const VectorD& b2, const MatrixD& upstream) {
    MatrixD pre = input * w1;
    pre.rowwise() += b1.transpose();
    const MatrixD hidden = pre.cwiseMax(0.0);

    MlpGradients g;
    g.w2 = hidden.transpose() * upstream;
    g.b2 = upstream.colwise().sum();
    MatrixD d_hidden = upstream * w2.transpose();
    // ReLU gate; exactly-zero pre-activations contribute nothing.
    d_hidden = (pre.array() > 0.0).select(d_hidden, 0.0);
    g.w1 = input.transpose() * d_hidden;
    g.b1 = d_hidden.colwise().sum();
    g.input = d_hidden * w1.transpose();
    (void)b2;
    return g;
}

VoteGradients vote_backward(const MatrixD& features, const MatrixD& offset_targets,
                            std::span<const uint8_t> fg, std::span<const uint8_t> labels,
                            const VoteModuleWeights& w) {
    check_mlp_shapes(w);
    const int64_t n = features.rows();
    if (offset_targets.rows() != n || static_cast<int64_t>(fg.size()) != n ||
        static_cast<int64_t>(labels.size()) != n) {
        throw std::invalid_argument("vote_backward: batch size mismatch");
    }

    const VoteOutput fwd = vote_forward(features, w);
    const double gamma = 2.0;
    const double alpha = 0.25;

    VoteGradients out;
    out.loss = vote_loss(fwd.offsets, offset_targets, fg) +
               focal_objectness_loss(fwd.objectness, labels, alpha, gamma);

    int64_t n_fg = 0;
    for (uint8_t f : fg) n_fg += f ? 1 : 0;

    // d(vote_loss)/d(offset): (o - t)/||o - t|| / N_f on foreground rows.
    MatrixD d_offsets = MatrixD::Zero(n, 3);
    if (n_fg > 0) {
        for (int64_t i = 0; i < n; ++i) {
            if (!fg[i]) continue;
            const Eigen::RowVector3d diff = fwd.offsets.row(i) - offset_targets.row(i);
            const double norm = diff.norm();
            if (norm > 0.0) d_offsets.row(i) = diff / (norm * double(n_fg));
        }
    }

    // d(focal)/d(logit) via p = sigmoid(logit).
    MatrixD d_logit(n, 1);
    for (int64_t i = 0; i < n; ++i) {
        const double p = fwd.objectness[i];
        const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
        const double pt = labels[i] ? pc : 1.0 - pc;
        const double at = labels[i] ? alpha : 1.0 - alpha;
        const double d_pt = at * (gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt) -
                                  std::pow(1.0 - pt, gamma) / pt);
        const double d_p = labels[i] ? d_pt : -d_pt;
        d_logit(i, 0) = d_p * p * (1.0 - p) / double(n);
    }

    const MlpGradients g_off = mlp2_backward(features, w.offset_w1, w.offset_b1, w.offset_w2,
                                             w.offset_b2, d_offsets);
    const MlpGradients g_obj = mlp2_backward(features, w.obj_w1, w.obj_b1, w.obj_w2, w.obj_b2,
                                             d_logit);

    out.param.offset_w1 = g_off.w1;
    out.param.offset_b1 = g_off.b1;
    out.param.offset_w2 = g_off.w2;
    out.param.offset_b2 = g_off.b2;
    out.param.obj_w1 = g_obj.w1;
    out.param.obj_b1 = g_obj.b1;
    out.param.obj_w2 = g_obj.w2;
    out.param.obj_b2 = g_obj.b2;
    out.features = g_off.input + g_obj.input;
    return out;
}

bool GtBox::contains(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d d = p - center;
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    const double lx = c * d[0] + s * d[1];
    const double ly = -s * d[0] + c * d[1];
    return std::abs(lx) <= size[0] / 2.0 && std::abs(ly) <= size[1] / 2.0 &&
           std::abs(d[2]) <= size[2] / 2.0;
}

std::vector<GtBox> load_boxes_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("boxes: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("boxes: missing header in " + path);
    auto strip = [](std::string s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
        return s;
    };
    if (strip(line) != "cx,cy,cz,l,w,h,yaw") {
        throw std::runtime_error("boxes: header must be cx,cy,cz,l,w,h,yaw (got '" + line + "')");
    }

    std::vector<GtBox> boxes;
    int64_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        line = strip(line);
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        double vals[7];
        for (int i = 0; i < 7; ++i) {
            if (!std::getline(ss, cell, ',')) {
                throw std::runtime_error("boxes: row " + std::to_string(row) + " has too few fields");
            }
            try {
                size_t used = 0;
                vals[i] = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw std::runtime_error("boxes: non-numeric cell '" + cell + "' at row " +
                                         std::to_string(row));
            }
        }
        GtBox b;
        b.center = {vals[0], vals[1], vals[2]};
        b.size = {vals[3], vals[4], vals[5]};
        b.yaw = vals[6];
        if (b.size.minCoeff() <= 0.0) {
            throw std::runtime_error("boxes: non-positive size at row " + std::to_string(row));
        }
        boxes.push_back(b);
    }
    return boxes;
}

void save_boxes_csv(std::span<const GtBox> boxes, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("boxes: cannot write " + path);
    out << "cx,cy,cz,l,w,h,yaw\n";
    out.precision(17);
    for (const auto& b : boxes) {
        out << b.center[0] << ',' << b.center[1] << ',' << b.center[2] << ',' << b.size[0]
            << ',' << b.size[1] << ',' << b.size[2] << ',' << b.yaw << '\n';
    }
}

VoteTargets assign_targets(std::span<const VoxelCoord> coords, const VoxelizationSpec& spec,
                           std::span<const GtBox> boxes) {
    VoteTargets t;
    t.fg.assign(coords.size(), 0);
    t.offsets = MatrixD::Zero(static_cast<int64_t>(coords.size()), 3);
    t.box_index.assign(coords.size(), -1);

    for (size_t i = 0; i < coords.size(); ++i) {
        const auto& c = coords[i];
        Eigen::Vector3d center_m;
        const int32_t xyz[3] = {c.x, c.y, c.z};
        for (int a = 0; a < 3; ++a) {
            center_m[a] = double(spec.origin[a]) + (double(xyz[a]) + 0.5) * double(spec.voxel_size[a]);
        }

        int32_t best = -1;
        for (int32_t b = 0; b < static_cast<int32_t>(boxes.size()); ++b) {
            if (!boxes[b].contains(center_m)) continue;
            if (best < 0 || boxes[b].volume() < boxes[best].volume()) best = b;
        }
        if (best < 0) continue;

        t.fg[i] = 1;
        t.box_index[i] = best;
        for (int a = 0; a < 3; ++a) {
            t.offsets(static_cast<int64_t>(i), a) =
                (boxes[best].center[a] - center_m[a]) / double(spec.voxel_size[a]);
        }
    }
    return t;
}

namespace {

VoteSet collect_votes(const SparseVoxelGrid& refined, std::span<const int32_t> seeds,
                      const MatrixD& offsets_for_seeds) {
    VoteSet votes;
    votes.features.resize(static_cast<int64_t>(seeds.size()), refined.channels());
    votes.positions.reserve(seeds.size());
    votes.seed_index.assign(seeds.begin(), seeds.end());
    for (size_t i = 0; i < seeds.size(); ++i) {
        const auto& c = refined.coords()[seeds[i]];
        votes.positions.emplace_back(double(c.x) + 0.5 + offsets_for_seeds(int64_t(i), 0),
                                     double(c.y) + 0.5 + offsets_for_seeds(int64_t(i), 1),
                                     double(c.z) + 0.5 + offsets_for_seeds(int64_t(i), 2));
        votes.features.row(static_cast<int64_t>(i)) = refined.features().row(seeds[i]);
    }
    return votes;
}

}  // namespace

VoteSet generate_votes(const SparseVoxelGrid& refined, const VoteModuleWeights& w,
                       double threshold) {
    const VoteOutput out = vote_forward(refined.features().cast<double>(), w);
    std::vector<int32_t> seeds;
    for (int32_t i = 0; i < static_cast<int32_t>(refined.size()); ++i) {
        if (out.objectness[i] >= threshold) seeds.push_back(i);
    }
    MatrixD offsets(static_cast<int64_t>(seeds.size()), 3);
    for (size_t i = 0; i < seeds.size(); ++i) offsets.row(int64_t(i)) = out.offsets.row(seeds[i]);
    return collect_votes(refined, seeds, offsets);
}

VoteSet generate_votes_oracle(const SparseVoxelGrid& refined, std::span<const uint8_t> fg,
                              const MatrixD& offsets) {
    if (static_cast<int64_t>(fg.size()) != refined.size() || offsets.rows() != refined.size()) {
        throw std::invalid_argument("generate_votes_oracle: mask/offset size mismatch");
    }
    std::vector<int32_t> seeds;
    for (int32_t i = 0; i < static_cast<int32_t>(refined.size()); ++i) {
        if (fg[i]) seeds.push_back(i);
    }
    MatrixD picked(static_cast<int64_t>(seeds.size()), 3);
    for (size_t i = 0; i < seeds.size(); ++i) picked.row(int64_t(i)) = offsets.row(seeds[i]);
    return collect_votes(refined, seeds, picked);
}

SparseVoxelGrid revoxelize_votes(const VoteSet& votes, const Extent& extent, int32_t batch,
                                 int channels, int64_t* clamped) {
    struct Accum {
        VoxelCoord coord;
        int64_t count = 0;
        Eigen::VectorXd sum;
    };
    std::map<int64_t, Accum> cells;  // keyed by flattened coord: deterministic order
    int64_t clamp_count = 0;

    for (size_t i = 0; i < votes.positions.size(); ++i) {
        VoxelCoord c;
        c.b = batch;
        int32_t* axes[3] = {&c.x, &c.y, &c.z};
        const int32_t limits[3] = {extent.x, extent.y, extent.z};
        bool was_clamped = false;
        for (int a = 0; a < 3; ++a) {
            int64_t v = static_cast<int64_t>(std::floor(votes.positions[i][a]));
            if (v < 0) {
                v = 0;
                was_clamped = true;
            } else if (v >= limits[a]) {
                v = limits[a] - 1;
                was_clamped = true;
            }
            *axes[a] = static_cast<int32_t>(v);
        }
        if (was_clamped) ++clamp_count;

        auto [it, inserted] = cells.try_emplace(flatten_key(c, extent));
        if (inserted) {
            it->second.coord = c;
            it->second.sum = Eigen::VectorXd::Zero(channels);
        }
        it->second.count += 1;
        it->second.sum += votes.features.row(static_cast<int64_t>(i)).cast<double>().transpose();
    }
    if (clamped) *clamped = clamp_count;

    std::vector<VoxelCoord> coords;
    MatrixF features(static_cast<int64_t>(cells.size()), channels);
    int64_t row = 0;
    for (const auto& [key, acc] : cells) {
        coords.push_back(acc.coord);
        features.row(row++) = (acc.sum / double(acc.count)).cast<float>().transpose();
    }
    return build_hash(extent, std::move(coords), std::move(features));
}

SparseVoxelGrid context_aggregate(const SparseVoxelGrid& vote_grid,
                                  const SparseVoxelGrid& refined, const PipelineConfig& cfg,
                                  const BlockWeights& w) {
    cfg.validate();
    if (!(vote_grid.extent() == refined.extent())) {
        throw std::invalid_argument("context_aggregate: vote and refined grids must share extent");
    }
    SparseVoxelGrid out = vote_grid;
    if (vote_grid.size() == 0) return out;

    const WindowSet windows = partition_query_windows(vote_grid, cfg.query_window);
    MatrixF next = vote_grid.features();
    const HeadGroupConfig hc = cfg.head_config();
    const int width = hc.group_width();

    parallel_for(windows.size(), cfg.threads, [&](int64_t j) {
        const auto& queries = windows.members[j];  // all of them; no chessboard sampling
        const int64_t nq = static_cast<int64_t>(queries.size());

        MatrixF f0(nq, cfg.channels);
        std::vector<std::array<int32_t, 3>> x0(queries.size());
        for (int64_t i = 0; i < nq; ++i) {
            f0.row(i) = vote_grid.features().row(queries[i]);
            x0[i] = vote_grid.coords()[queries[i]].xyz();
        }

        const KeySampleSet keys =
            balanced_multiwindow_sample(refined, windows.centers[j], cfg.key_windows, cfg.n_pool,
                                        cfg.n_keys, cfg.linear_scan_gather);
        std::vector<MatrixF> fm(hc.groups());
        for (int m = 0; m < hc.groups(); ++m) fm[m] = keys.scales[m].features;
        const ProjectedQkv proj = project_qkv(f0, fm, w);

        std::vector<MatrixF> group_out(hc.groups());
        for (int m = 0; m < hc.groups(); ++m) {
            const auto& scale = keys.scales[m];
            if (scale.coords.empty()) {
                group_out[m] = MatrixF::Zero(nq, width);
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
        for (int64_t i = 0; i < nq; ++i) next.row(queries[i]) = updated.row(i);
    });

    out.set_features(std::move(next));
    return out;
}

SparseVoxelGrid merge_voxels(const SparseVoxelGrid& vote_grid, const SparseVoxelGrid& refined,
                             MergeRule rule) {
    if (vote_grid.size() > 0 && !(vote_grid.extent() == refined.extent())) {
        throw std::invalid_argument("merge_voxels: grids must share extent");
    }

    std::vector<VoxelCoord> coords = refined.coords();
    MatrixF features = refined.features();
    std::vector<std::pair<VoxelCoord, int32_t>> inserted;  // appended after existing voxels

    for (int32_t i = 0; i < static_cast<int32_t>(vote_grid.size()); ++i) {
        const auto& c = vote_grid.coords()[i];
        if (auto idx = refined.lookup(c)) {
            if (rule == MergeRule::replace) {
                features.row(*idx) = vote_grid.features().row(i);
            } else {
                features.row(*idx) =
                    ((features.row(*idx).cast<double>() +
                      vote_grid.features().row(i).cast<double>()) / 2.0).cast<float>();
            }
        } else {
            inserted.emplace_back(c, i);
        }
    }

    const int64_t old_n = features.rows();
    features.conservativeResize(old_n + static_cast<int64_t>(inserted.size()), features.cols());
    for (size_t i = 0; i < inserted.size(); ++i) {
        coords.push_back(inserted[i].first);
        features.row(old_n + static_cast<int64_t>(i)) =
            vote_grid.features().row(inserted[i].second);
    }
    return build_hash(refined.extent(), std::move(coords), std::move(features));
}

}  // namespace msvt
