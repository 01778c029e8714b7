#include "msvt/config.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>

namespace msvt {

using nlohmann::json;

HeadGroupConfig PipelineConfig::head_config() const {
    HeadGroupConfig hc;
    hc.channels = channels;
    hc.heads_per_group = heads_per_group;
    return hc;
}

std::array<int32_t, 3> PipelineConfig::largest_key_window() const {
    std::array<int32_t, 3> r_max{1, 1, 1};
    for (const auto& w : key_windows) {
        for (int a = 0; a < 3; ++a) r_max[a] = std::max(r_max[a], w.size[a]);
    }
    return r_max;
}

void PipelineConfig::validate() const {
    if (num_blocks < 1) throw std::invalid_argument("config: num_blocks must be >= 1");
    if (key_windows.empty()) throw std::invalid_argument("config: need at least one key window");
    if (key_windows.size() != heads_per_group.size()) {
        throw std::invalid_argument("config: one head group per key window scale required");
    }
    for (size_t m = 1; m < key_windows.size(); ++m) {
        for (int a = 0; a < 3; ++a) {
            if (key_windows[m].size[a] < key_windows[m - 1].size[a]) {
                throw std::invalid_argument("config: key windows must be ordered small to large");
            }
        }
    }
    if (n_keys < 1 || n_pool < 1) throw std::invalid_argument("config: n_keys/n_pool must be >= 1");
    if (knn_k < 1) throw std::invalid_argument("config: knn_k must be >= 1");
    if (ffn_hidden_mult < 1) throw std::invalid_argument("config: ffn_hidden_mult must be >= 1");
    if (vote.hidden < 1) throw std::invalid_argument("config: vote.hidden must be >= 1");
    head_config().validate();
    if (cbs.rate != CbsRate::off) cbs.validate();
}

CbsRate parse_cbs_rate(const std::string& text) {
    if (text == "off") return CbsRate::off;
    if (text == "1/2") return CbsRate::half;
    if (text == "1/4") return CbsRate::quarter;
    if (text == "1/8") return CbsRate::eighth;
    throw std::invalid_argument("unknown chessboard rate '" + text +
                                "' (expected off, 1/2, 1/4, or 1/8)");
}

std::string cbs_rate_name(CbsRate rate) {
    switch (rate) {
        case CbsRate::off: return "off";
        case CbsRate::half: return "1/2";
        case CbsRate::quarter: return "1/4";
        case CbsRate::eighth: return "1/8";
    }
    return "?";
}

namespace {

json window_to_json(const WindowSpec& w) {
    return json::array({w.size[0], w.size[1], w.size[2]});
}

WindowSpec window_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw std::invalid_argument("config: window sizes must be 3-element arrays");
    }
    return WindowSpec{{j[0].get<int32_t>(), j[1].get<int32_t>(), j[2].get<int32_t>()}};
}

std::array<bool, 3> axes_from_json(const json& j) {
    std::array<bool, 3> axes{false, false, false};
    for (const auto& name : j) {
        const std::string s = name.get<std::string>();
        if (s == "x") axes[0] = true;
        else if (s == "y") axes[1] = true;
        else if (s == "z") axes[2] = true;
        else throw std::invalid_argument("config: cbs axis must be x, y, or z");
    }
    return axes;
}

json axes_to_json(const std::array<bool, 3>& axes) {
    json j = json::array();
    const char* names[3] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a) {
        if (axes[a]) j.push_back(names[a]);
    }
    return j;
}

}  // namespace

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config: " + path + " is not valid JSON: " + e.what());
    }

    PipelineConfig cfg;
    cfg.num_blocks = j.value("num_blocks", cfg.num_blocks);
    cfg.channels = j.value("channels", cfg.channels);
    if (j.contains("query_window")) cfg.query_window = window_from_json(j["query_window"]);
    if (j.contains("key_windows")) {
        cfg.key_windows.clear();
        for (const auto& w : j["key_windows"]) cfg.key_windows.push_back(window_from_json(w));
    }
    if (j.contains("heads_per_group")) {
        cfg.heads_per_group = j["heads_per_group"].get<std::vector<int>>();
    }
    cfg.n_keys = j.value("n_keys", cfg.n_keys);
    cfg.n_pool = j.value("n_pool", cfg.n_pool);
    if (j.contains("cbs")) {
        const auto& c = j["cbs"];
        cfg.cbs = ChessboardSpec::with_rate(parse_cbs_rate(c.value("rate", "1/4")));
        if (c.contains("axes")) cfg.cbs.axes = axes_from_json(c["axes"]);
    }
    cfg.knn_k = j.value("knn_k", cfg.knn_k);
    cfg.ffn_hidden_mult = j.value("ffn_hidden_mult", cfg.ffn_hidden_mult);
    if (j.contains("voxelization")) {
        const auto& v = j["voxelization"];
        if (v.contains("voxel_size")) {
            for (int a = 0; a < 3; ++a) cfg.voxelization.voxel_size[a] = v["voxel_size"][a];
        }
        if (v.contains("origin")) {
            for (int a = 0; a < 3; ++a) cfg.voxelization.origin[a] = v["origin"][a];
        }
        if (v.contains("extent")) {
            cfg.voxelization.extent = {v["extent"][0].get<int32_t>(),
                                       v["extent"][1].get<int32_t>(),
                                       v["extent"][2].get<int32_t>()};
        }
    }
    if (j.contains("vote")) {
        const auto& v = j["vote"];
        cfg.vote.hidden = v.value("hidden", cfg.vote.hidden);
        cfg.vote.threshold = v.value("threshold", cfg.vote.threshold);
        const std::string rule = v.value("merge_rule", "replace");
        if (rule == "replace") cfg.vote.merge_rule = MergeRule::replace;
        else if (rule == "mean") cfg.vote.merge_rule = MergeRule::mean;
        else throw std::invalid_argument("config: vote.merge_rule must be replace or mean");
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.linear_scan_gather = j.value("linear_scan_gather", cfg.linear_scan_gather);
    cfg.validate();
    return cfg;
}

void save_config(const PipelineConfig& cfg, const std::string& path) {
    json j;
    j["num_blocks"] = cfg.num_blocks;
    j["channels"] = cfg.channels;
    j["query_window"] = window_to_json(cfg.query_window);
    j["key_windows"] = json::array();
    for (const auto& w : cfg.key_windows) j["key_windows"].push_back(window_to_json(w));
    j["heads_per_group"] = cfg.heads_per_group;
    j["n_keys"] = cfg.n_keys;
    j["n_pool"] = cfg.n_pool;
    j["cbs"] = {{"rate", cbs_rate_name(cfg.cbs.rate)}, {"axes", axes_to_json(cfg.cbs.axes)}};
    j["knn_k"] = cfg.knn_k;
    j["ffn_hidden_mult"] = cfg.ffn_hidden_mult;
    j["voxelization"] = {
        {"voxel_size", {cfg.voxelization.voxel_size[0], cfg.voxelization.voxel_size[1],
                        cfg.voxelization.voxel_size[2]}},
        {"origin", {cfg.voxelization.origin[0], cfg.voxelization.origin[1],
                    cfg.voxelization.origin[2]}},
        {"extent", {cfg.voxelization.extent.x, cfg.voxelization.extent.y,
                    cfg.voxelization.extent.z}}};
    j["vote"] = {{"hidden", cfg.vote.hidden},
                 {"threshold", cfg.vote.threshold},
                 {"merge_rule", cfg.vote.merge_rule == MergeRule::replace ? "replace" : "mean"}};
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["linear_scan_gather"] = cfg.linear_scan_gather;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace msvt
