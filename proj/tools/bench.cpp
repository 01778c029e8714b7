#include "bench.hpp"

#include "msvt/backbone.hpp"
#include "msvt/pointcloud_io.hpp"
#include "msvt/scene_gen.hpp"
#include "msvt/serialization.hpp"
#include "msvt/windowing.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <unordered_set>

namespace msvt::bench {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Process peak resident set from /proc/self/status (VmHWM), in bytes.
// Monotone over the process lifetime, so later rows report the running peak.
int64_t peak_rss_bytes() {
    std::ifstream status("/proc/self/status");
    std::string line;
    while (std::getline(status, line)) {
        if (line.rfind("VmHWM:", 0) == 0) {
            std::istringstream ss(line.substr(6));
            int64_t kb = 0;
            ss >> kb;
            return kb * 1024;
        }
    }
    return 0;
}

struct Row {
    std::string config;
    std::string path;
    double wall_ms = 0.0;
    int64_t rss_bytes = 0;
    uint64_t queries = 0;
    uint64_t windows = 0;
    std::vector<uint64_t> keys;
};

void print_rows(const std::vector<Row>& rows, int scales, std::ostream& out, bool csv) {
    if (csv) {
        out << "config,path,wall_ms,peak_rss_bytes,attention_queries,windows";
        for (int m = 0; m < scales; ++m) out << ",keys_scale" << m;
        out << "\n";
        for (const auto& r : rows) {
            out << r.config << ',' << r.path << ',' << std::fixed << std::setprecision(2)
                << r.wall_ms << ',' << r.rss_bytes << ',' << r.queries << ',' << r.windows;
            for (int m = 0; m < scales; ++m) {
                out << ',' << (m < static_cast<int>(r.keys.size()) ? r.keys[m] : 0);
            }
            out << "\n";
        }
        return;
    }
    out << std::left << std::setw(10) << "config" << std::setw(14) << "path" << std::right
        << std::setw(12) << "wall_ms" << std::setw(14) << "peak_rss_mb" << std::setw(12)
        << "queries" << std::setw(10) << "windows";
    for (int m = 0; m < scales; ++m) out << std::setw(12) << ("keys_s" + std::to_string(m));
    out << "\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(10) << r.config << std::setw(14) << r.path << std::right
            << std::setw(12) << std::fixed << std::setprecision(1) << r.wall_ms << std::setw(14)
            << std::setprecision(1) << double(r.rss_bytes) / (1024.0 * 1024.0) << std::setw(12)
            << r.queries << std::setw(10) << r.windows;
        for (int m = 0; m < scales; ++m) {
            out << std::setw(12) << (m < static_cast<int>(r.keys.size()) ? r.keys[m] : 0);
        }
        out << "\n";
    }
}

// Window-gather timing at extent 256^3 with 1e4 voxels: hash probes vs the
// bounds-filtering linear scan.
std::vector<Row> gather_microbench(int64_t n_pool) {
    const Extent extent{256, 256, 256};
    std::mt19937_64 gen(11);
    std::unordered_set<int64_t> seen;
    std::vector<VoxelCoord> coords;
    while (coords.size() < 10000) {
        VoxelCoord c;
        c.x = static_cast<int32_t>(gen() % 256);
        c.y = static_cast<int32_t>(gen() % 256);
        c.z = static_cast<int32_t>(gen() % 256);
        if (seen.insert(flatten_key(c, extent)).second) coords.push_back(c);
    }
    MatrixF features = MatrixF::Zero(static_cast<int64_t>(coords.size()), 4);
    const SparseVoxelGrid grid = build_hash(extent, coords, std::move(features));

    std::vector<Eigen::Vector3d> centers;
    const WindowSpec window{{7, 7, 7}};
    for (int i = 0; i < 2000; ++i) {
        centers.emplace_back(double(gen() % 250) + 3.5, double(gen() % 250) + 3.5,
                             double(gen() % 250) + 3.5);
    }

    std::vector<Row> rows;
    uint64_t hits_hash = 0, hits_scan = 0;
    {
        const auto t0 = Clock::now();
        for (const auto& c : centers) {
            hits_hash += gather_window_voxels(grid, c, window, n_pool).size();
        }
        rows.push_back({"gather", "sparse-hash", elapsed_ms(t0), peak_rss_bytes(),
                        static_cast<uint64_t>(centers.size()), 0, {hits_hash}});
    }
    {
        const auto t0 = Clock::now();
        for (const auto& c : centers) {
            hits_scan += gather_window_voxels_scan(grid, c, window, n_pool).size();
        }
        rows.push_back({"gather", "dense-scan", elapsed_ms(t0), peak_rss_bytes(),
                        static_cast<uint64_t>(centers.size()), 0, {hits_scan}});
    }
    if (hits_hash != hits_scan) {
        throw std::runtime_error("bench: gather microbench hit counts disagree");
    }
    return rows;
}

}  // namespace

int run(const PipelineConfig& base_cfg, const BenchOptions& options) {
    PipelineConfig cfg = base_cfg;
    cfg.threads = options.threads;

    SparseVoxelGrid grid;
    if (!options.input_grid.empty()) {
        grid = load_grid(options.input_grid);
        cfg.voxelization.extent = grid.extent();
    } else {
        SceneParams params;
        const double hw = options.scene_halfwidth;
        params.range = {{-hw, -hw, -2.0}, {hw, hw, 4.0}};
        params.num_boxes = options.scene_boxes;
        params.points_per_box = 1200;
        params.ground_points = options.scene_ground_points;
        params.min_center_gap = 6.0;
        params.seed = options.scene_seed;
        cfg.voxelization = make_spec(params.range, {0.4, 0.4, 0.6});
        const SyntheticScene scene = generate_scene(params, cfg.voxelization.voxel_size);
        grid = voxelize(crop_points(scene.cloud, params.range), cfg.voxelization, cfg.channels);
    }
    std::cout << "bench scene: " << grid.size() << " voxels, extent (" << grid.extent().x
              << ", " << grid.extent().y << ", " << grid.extent().z << ")\n";

    const ModelWeights weights = init_weights(cfg, options.weight_seed);
    const CbsRate rates[4] = {CbsRate::off, CbsRate::half, CbsRate::quarter, CbsRate::eighth};

    std::vector<Row> rows;
    for (int lane = 0; lane < (options.sweep_dense_lane ? 2 : 1); ++lane) {
        for (const CbsRate rate : rates) {
            PipelineConfig run_cfg = cfg;
            run_cfg.cbs = ChessboardSpec::with_rate(rate);
            run_cfg.linear_scan_gather = (lane == 1);

            ForwardStats stats;
            const auto t0 = Clock::now();
            backbone_forward(grid, run_cfg, weights, &stats);
            Row row;
            row.config = cbs_rate_name(rate);
            row.path = lane == 0 ? "sparse" : "dense-oracle";
            row.wall_ms = elapsed_ms(t0);
            row.rss_bytes = peak_rss_bytes();
            row.queries = stats.attention_queries;
            row.windows = stats.windows;
            row.keys = stats.keys_per_scale;
            rows.push_back(std::move(row));
        }
    }
    if (options.gather_microbench) {
        for (auto& row : gather_microbench(cfg.n_pool)) rows.push_back(std::move(row));
    }

    const int scales = static_cast<int>(cfg.key_windows.size());
    print_rows(rows, scales, std::cout, false);
    if (!options.output_csv.empty()) {
        std::ofstream csv(options.output_csv);
        if (!csv) throw std::runtime_error("bench: cannot write " + options.output_csv);
        print_rows(rows, scales, csv, true);
        std::cout << "csv written to " << options.output_csv << "\n";
    }
    return 0;
}

}  // namespace msvt::bench
