#pragma once

#include "msvt/attention.hpp"
#include "msvt/sampling.hpp"
#include "msvt/types.hpp"

#include <string>
#include <vector>

namespace msvt {

enum class MergeRule { replace, mean };

struct VoteConfig {
    int hidden = 64;          // MLP hidden width
    double threshold = 0.5;   // objectness cutoff at inference
    MergeRule merge_rule = MergeRule::replace;
};

// Everything needed to run the pipeline; all defaults overridable via a JSON
// file mirroring these field names.
struct PipelineConfig {
    int num_blocks = 4;
    int channels = 64;
    WindowSpec query_window{{3, 3, 5}};
    std::vector<WindowSpec> key_windows{WindowSpec{{3, 3, 5}}, WindowSpec{{7, 7, 7}}};
    std::vector<int> heads_per_group{4, 4};
    int64_t n_keys = 32;    // FPS cap per scale (N_k)
    int64_t n_pool = 512;   // gather cap per window (N_p)
    ChessboardSpec cbs = ChessboardSpec::with_rate(CbsRate::quarter);
    int knn_k = 3;
    int ffn_hidden_mult = 2;
    VoxelizationSpec voxelization;
    VoteConfig vote;
    uint64_t seed = 24421;
    int threads = 1;
    bool linear_scan_gather = false;  // bench's dense lane; hash path otherwise

    HeadGroupConfig head_config() const;
    std::array<int32_t, 3> largest_key_window() const;
    void validate() const;
};

PipelineConfig load_config(const std::string& path);
void save_config(const PipelineConfig& cfg, const std::string& path);

// "off" | "1/2" | "1/4" | "1/8"; throws std::invalid_argument otherwise.
CbsRate parse_cbs_rate(const std::string& text);
std::string cbs_rate_name(CbsRate rate);

}  // namespace msvt
