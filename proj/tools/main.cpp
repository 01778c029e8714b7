#include "bench.hpp"

#include "msvt/backbone.hpp"
#include "msvt/center_voting.hpp"
#include "msvt/pointcloud_io.hpp"
#include "msvt/selfcheck.hpp"
#include "msvt/serialization.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>

namespace {

using namespace msvt;

struct CommonModelArgs {
    std::string config_path;
    std::string weights_path;
    std::string dump_weights_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = -1;
};

PipelineConfig resolve_config(const CommonModelArgs& args, const SparseVoxelGrid& grid) {
    PipelineConfig cfg = args.config_path.empty() ? PipelineConfig{} : load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    if (args.threads >= 0) cfg.threads = args.threads;
    // The grid is the authority on the extent (pillar weights depend on it).
    cfg.voxelization.extent = grid.extent();
    cfg.validate();
    if (grid.size() > 0 && grid.channels() != cfg.channels) {
        throw std::runtime_error("grid has " + std::to_string(grid.channels()) +
                                 " channels but the config wants " +
                                 std::to_string(cfg.channels) +
                                 "; re-voxelize with --feature-dim " +
                                 std::to_string(cfg.channels));
    }
    return cfg;
}

ModelWeights resolve_weights(const CommonModelArgs& args, const PipelineConfig& cfg) {
    ModelWeights w = args.weights_path.empty() ? init_weights(cfg, cfg.seed)
                                               : load_weights(args.weights_path, cfg);
    if (!args.dump_weights_path.empty()) {
        save_weights(w, args.dump_weights_path);
        std::cout << "weights written to " << args.dump_weights_path << "\n";
    }
    return w;
}

void add_model_args(CLI::App* cmd, CommonModelArgs& args) {
    cmd->add_option("--config", args.config_path, "pipeline config JSON");
    cmd->add_option("--weights", args.weights_path,
                    "weight container; omitted: init deterministically from the seed");
    cmd->add_option("--dump-weights", args.dump_weights_path,
                    "write the (loaded or initialized) weights to this container");
    cmd->add_option("--seed", args.seed, "weight init seed (overrides the config)")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_option("--threads", args.threads, "worker threads (0 = all cores, 1 = serial)");
}

int cmd_voxelize(const std::string& input, const std::string& format_name,
                 const std::string& preset, std::vector<double> voxel_size,
                 std::vector<double> range, int feature_dim, int batch,
                 const std::string& output) {
    const PointFormat format =
        format_name == "csv" ? PointFormat::csv : PointFormat::kitti_bin;

    CropRange crop;
    VoxelizationSpec spec;
    if (!voxel_size.empty() || !range.empty()) {
        if (voxel_size.size() != 3 || range.size() != 6) {
            throw CLI::ValidationError(
                "--voxel-size needs 3 values and --range needs 6 (xmin,ymin,zmin,xmax,ymax,zmax)");
        }
        crop.min = {range[0], range[1], range[2]};
        crop.max = {range[3], range[4], range[5]};
        spec = make_spec(crop, {voxel_size[0], voxel_size[1], voxel_size[2]});
    } else if (preset == "kitti") {
        crop = kitti_range();
        spec = kitti_spec();
    } else {
        crop = waymo_range();
        spec = waymo_spec();
    }

    const PointCloud cloud = load_points(input, format);
    const PointCloud cropped = crop_points(cloud, crop);
    const SparseVoxelGrid grid = voxelize(cropped, spec, feature_dim, batch);
    save_grid(grid, output);
    std::cout << cloud.size() << " points -> " << cropped.size() << " in range -> "
              << grid.size() << " voxels, extent (" << spec.extent.x << ", " << spec.extent.y
              << ", " << spec.extent.z << ")\n";
    return 0;
}

int cmd_forward(const CommonModelArgs& args, const std::string& input,
                const std::string& output, int blocks_override,
                const std::string& cbs_rate_name_arg, const std::string& bev_path,
                bool print_stats) {
    const SparseVoxelGrid grid = load_grid(input);
    PipelineConfig cfg = resolve_config(args, grid);
    if (blocks_override > 0) cfg.num_blocks = blocks_override;
    if (!cbs_rate_name_arg.empty()) {
        cfg.cbs = ChessboardSpec::with_rate(parse_cbs_rate(cbs_rate_name_arg));
    }
    const ModelWeights weights = resolve_weights(args, cfg);

    ForwardStats stats;
    const SparseVoxelGrid refined = backbone_forward(grid, cfg, weights, &stats);
    save_grid(refined, output);
    std::cout << "refined " << refined.size() << " voxels through " << cfg.num_blocks
              << " blocks (cbs " << cbs_rate_name(cfg.cbs.rate) << ") -> " << output << "\n";
    if (print_stats) {
        std::cout << "attention queries: " << stats.attention_queries
                  << ", interpolated: " << stats.interpolated_queries
                  << ", windows: " << stats.windows << "\n";
        for (size_t m = 0; m < stats.keys_per_scale.size(); ++m) {
            std::cout << "keys at scale " << m << ": " << stats.keys_per_scale[m] << "\n";
        }
    }
    if (!bev_path.empty()) {
        const BevMap bev = pillar_compress(refined, weights.pillar, cfg.head_config(),
                                           cfg.threads);
        save_bev(bev, bev_path);
        std::cout << "BEV map with " << bev.cells.size() << " pillars -> " << bev_path << "\n";
    }
    return 0;
}

int cmd_vote(const CommonModelArgs& args, const std::string& input, const std::string& output,
             const std::string& mode, const std::string& boxes_path, double threshold_override,
             const std::string& bev_path) {
    const SparseVoxelGrid refined = load_grid(input);
    PipelineConfig cfg = resolve_config(args, refined);
    if (threshold_override >= 0.0) cfg.vote.threshold = threshold_override;
    const ModelWeights weights = resolve_weights(args, cfg);

    VoteSet votes;
    if (mode == "oracle") {
        if (boxes_path.empty()) {
            throw CLI::ValidationError("--mode oracle requires --boxes");
        }
        const auto boxes = load_boxes_csv(boxes_path);
        const VoteTargets targets = assign_targets(refined.coords(), cfg.voxelization, boxes);
        votes = generate_votes_oracle(refined, targets.fg, targets.offsets);
    } else {
        votes = generate_votes(refined, weights.vote, cfg.vote.threshold);
    }

    int64_t clamped = 0;
    const SparseVoxelGrid vote_grid =
        revoxelize_votes(votes, refined.extent(), refined.batch(), cfg.channels, &clamped);
    const SparseVoxelGrid enriched = context_aggregate(vote_grid, refined, cfg, weights.context);
    const SparseVoxelGrid merged = merge_voxels(enriched, refined, cfg.vote.merge_rule);
    save_grid(merged, output);

    std::cout << votes.positions.size() << " votes (" << clamped << " clamped) -> "
              << vote_grid.size() << " vote voxels; merged " << refined.size() << " + "
              << (merged.size() - refined.size()) << " new -> " << output << "\n";
    if (!bev_path.empty()) {
        const BevMap bev = pillar_compress(merged, weights.pillar, cfg.head_config(),
                                           cfg.threads);
        save_bev(bev, bev_path);
        std::cout << "BEV map with " << bev.cells.size() << " pillars -> " << bev_path << "\n";
    }
    return 0;
}

int cmd_selftest(const std::string& filter, const std::string& weights_path,
                 const std::string& config_path) {
    std::vector<selfcheck::CheckResult> results = selfcheck::run_suite(filter);
    if (!weights_path.empty()) {
        results.push_back(selfcheck::check_weights_file(weights_path, config_path));
    }
    if (results.empty()) {
        std::cout << "no checks match filter '" << filter << "'\n";
        return 1;
    }
    bool all_passed = true;
    for (const auto& r : results) {
        all_passed = all_passed && r.passed;
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(26) << r.name
                  << std::right << std::setw(8) << std::fixed << std::setprecision(2)
                  << r.seconds << "s  " << r.detail << "\n";
    }
    std::cout << (all_passed ? "selftest passed" : "selftest FAILED") << "\n";
    return all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse mixed-scale voxel transformer pipeline"};
    app.require_subcommand(1);

    // voxelize
    std::string vox_input, vox_format = "kitti_bin", vox_preset = "waymo", vox_output;
    std::vector<double> vox_size, vox_range;
    int vox_feature_dim = 64, vox_batch = 0;
    auto* voxelize_cmd = app.add_subcommand("voxelize", "load, crop, and voxelize a point cloud");
    voxelize_cmd->add_option("--input", vox_input, "point file")->required();
    voxelize_cmd->add_option("--format", vox_format, "kitti_bin | csv")
        ->check(CLI::IsMember({"kitti_bin", "csv"}));
    voxelize_cmd->add_option("--preset", vox_preset, "waymo | kitti")
        ->check(CLI::IsMember({"waymo", "kitti"}));
    voxelize_cmd->add_option("--voxel-size", vox_size, "meters per axis (3 values)");
    voxelize_cmd->add_option("--range", vox_range, "xmin,ymin,zmin,xmax,ymax,zmax");
    voxelize_cmd->add_option("--feature-dim", vox_feature_dim, "voxel feature channels");
    voxelize_cmd->add_option("--batch", vox_batch, "batch index stored in the grid");
    voxelize_cmd->add_option("--output", vox_output, "grid container")->required();

    // forward
    CommonModelArgs fwd_args;
    std::string fwd_input, fwd_output, fwd_cbs, fwd_bev;
    int fwd_blocks = 0;
    bool fwd_stats = false;
    auto* forward_cmd = app.add_subcommand("forward", "run the backbone");
    forward_cmd->add_option("--input", fwd_input, "input grid container")->required();
    forward_cmd->add_option("--output", fwd_output, "refined grid container")->required();
    add_model_args(forward_cmd, fwd_args);
    forward_cmd->add_option("--blocks", fwd_blocks, "override the block count");
    forward_cmd->add_option("--cbs-rate", fwd_cbs, "off | 1/2 | 1/4 | 1/8")
        ->check(CLI::IsMember({"off", "1/2", "1/4", "1/8"}));
    forward_cmd->add_option("--bev", fwd_bev, "also write a pillar-compressed BEV map");
    forward_cmd->add_flag("--print-stats", fwd_stats, "print query/key counters");

    // vote
    CommonModelArgs vote_args;
    std::string vote_input, vote_output, vote_mode = "predicted", vote_boxes, vote_bev;
    double vote_threshold = -1.0;
    auto* vote_cmd = app.add_subcommand("vote", "center voting: vote, re-voxelize, enrich, merge");
    vote_cmd->add_option("--input", vote_input, "refined grid container")->required();
    vote_cmd->add_option("--output", vote_output, "merged grid container")->required();
    vote_cmd->add_option("--mode", vote_mode, "oracle | predicted")
        ->check(CLI::IsMember({"oracle", "predicted"}));
    vote_cmd->add_option("--boxes", vote_boxes, "ground-truth boxes CSV (cx,cy,cz,l,w,h,yaw)");
    vote_cmd->add_option("--threshold", vote_threshold, "objectness cutoff (predicted mode)");
    add_model_args(vote_cmd, vote_args);
    vote_cmd->add_option("--bev", vote_bev, "also write a pillar-compressed BEV map");

    // bench
    bench::BenchOptions bench_opts;
    std::string bench_config;
    bool bench_no_dense = false, bench_no_gather = false;
    auto* bench_cmd = app.add_subcommand(
        "bench", "sweep chessboard rates x {sparse, dense-oracle}; csv columns: config, path, "
                 "wall_ms, peak_rss_bytes, attention_queries, windows, keys_scale<m>");
    bench_cmd->add_option("--config", bench_config, "pipeline config JSON");
    bench_cmd->add_option("--input", bench_opts.input_grid, "grid container (else synthetic)");
    bench_cmd->add_option("--output", bench_opts.output_csv, "CSV report path");
    bench_cmd->add_option("--boxes", bench_opts.scene_boxes, "synthetic scene box count");
    bench_cmd->add_option("--ground-points", bench_opts.scene_ground_points,
                          "synthetic ground points");
    bench_cmd->add_option("--halfwidth", bench_opts.scene_halfwidth,
                          "synthetic scene half-width (m)");
    bench_cmd->add_option("--scene-seed", bench_opts.scene_seed, "synthetic scene seed");
    bench_cmd->add_option("--threads", bench_opts.threads, "worker threads (0 = all cores)");
    bench_cmd->add_flag("--no-dense-lane", bench_no_dense, "skip the linear-scan gather lane");
    bench_cmd->add_flag("--no-gather-bench", bench_no_gather, "skip the gather microbench");

    // selftest
    std::string st_filter, st_weights, st_config;
    auto* selftest_cmd =
        app.add_subcommand("selftest", "run the oracle-equivalence and invariant suite");
    selftest_cmd->add_option("--filter", st_filter, "run only checks whose name contains this");
    selftest_cmd->add_option("--weights", st_weights, "also validate this weight container");
    selftest_cmd->add_option("--config", st_config, "config for the weights check");

    try {
        app.parse(argc, argv);

        if (voxelize_cmd->parsed()) {
            return cmd_voxelize(vox_input, vox_format, vox_preset, vox_size, vox_range,
                                vox_feature_dim, vox_batch, vox_output);
        }
        if (forward_cmd->parsed()) {
            return cmd_forward(fwd_args, fwd_input, fwd_output, fwd_blocks, fwd_cbs, fwd_bev,
                               fwd_stats);
        }
        if (vote_cmd->parsed()) {
            return cmd_vote(vote_args, vote_input, vote_output, vote_mode, vote_boxes,
                            vote_threshold, vote_bev);
        }
        if (bench_cmd->parsed()) {
            PipelineConfig cfg =
                bench_config.empty() ? PipelineConfig{} : load_config(bench_config);
            bench_opts.sweep_dense_lane = !bench_no_dense;
            bench_opts.gather_microbench = !bench_no_gather;
            return bench::run(cfg, bench_opts);
        }
        if (selftest_cmd->parsed()) {
            return cmd_selftest(st_filter, st_weights, st_config);
        }
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
