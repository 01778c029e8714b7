#pragma once

#include "msvt/config.hpp"

#include <string>

namespace msvt::bench {

struct BenchOptions {
    std::string input_grid;     // empty: generate a synthetic scene
    std::string output_csv;     // empty: stdout table only
    int scene_boxes = 24;
    int scene_ground_points = 90000;
    uint64_t scene_seed = 7;
    double scene_halfwidth = 36.0;  // meters
    bool sweep_dense_lane = true;   // linear-scan gather lane
    bool gather_microbench = true;  // hash vs scan at 256^3, N=1e4
    int threads = 0;
    uint64_t weight_seed = 1234;
};

// Sweeps chessboard rates {off, 1/2, 1/4, 1/8} x {sparse, dense-oracle}
// through the backbone, recording wall time, peak RSS, query and key counts.
// Returns the process exit code.
int run(const PipelineConfig& base_cfg, const BenchOptions& options);

}  // namespace msvt::bench
