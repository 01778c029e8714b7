#include "msvt/pointcloud_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace msvt {

namespace {

PointCloud load_kitti_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("load_points: cannot open " + path);
    const std::streamoff bytes = in.tellg();
    constexpr std::streamoff kRecord = 4 * sizeof(float);
    if (bytes % kRecord != 0) {
        throw std::runtime_error("load_points: " + path + " has " + std::to_string(bytes) +
                                 " bytes, not a multiple of the 16-byte (x,y,z,intensity) record");
    }
    const int64_t n = bytes / kRecord;
    in.seekg(0);

    PointCloud cloud;
    cloud.xyz.resize(n);
    cloud.feats.resize(n, 1);
    for (int64_t i = 0; i < n; ++i) {
        float rec[4];
        in.read(reinterpret_cast<char*>(rec), sizeof(rec));
        if (!in) throw std::runtime_error("load_points: short read in " + path);
        cloud.xyz[i] = {rec[0], rec[1], rec[2]};
        cloud.feats(i, 0) = rec[3];
    }
    return cloud;
}

// Splits one CSV record. Quoted fields are unwrapped ("" -> "); separators
// inside quotes are kept.
std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

float parse_cell(const std::string& cell, int64_t row, size_t col) {
    size_t used = 0;
    float value = 0.0f;
    try {
        value = std::stof(cell, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != cell.size()) {
        throw std::runtime_error("load_points: non-numeric CSV cell '" + cell + "' at row " +
                                 std::to_string(row) + ", column " + std::to_string(col + 1));
    }
    return value;
}

PointCloud load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_points: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("load_points: " + path + " is missing the CSV header row");
    }
    const auto header = split_csv_row(line);
    if (header.size() < 3 || header[0] != "x" || header[1] != "y" || header[2] != "z") {
        throw std::runtime_error("load_points: CSV header must start with x,y,z (got '" + line +
                                 "')");
    }
    const size_t cols = header.size();
    const int feat_dim = static_cast<int>(cols - 3);

    std::vector<Eigen::Vector3f> xyz;
    std::vector<float> feat_data;
    int64_t row = 1;  // header is row 1
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_row(line);
        if (fields.size() != cols) {
            throw std::runtime_error("load_points: row " + std::to_string(row) + " has " +
                                     std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(cols));
        }
        Eigen::Vector3f p;
        for (int a = 0; a < 3; ++a) p[a] = parse_cell(fields[a], row, a);
        xyz.push_back(p);
        for (size_t c = 3; c < cols; ++c) feat_data.push_back(parse_cell(fields[c], row, c));
    }

    PointCloud cloud;
    cloud.xyz = std::move(xyz);
    cloud.feats.resize(cloud.size(), feat_dim);
    for (int64_t i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < feat_dim; ++c) cloud.feats(i, c) = feat_data[i * feat_dim + c];
    }
    return cloud;
}

}  // namespace

PointCloud load_points(const std::string& path, PointFormat format) {
    switch (format) {
        case PointFormat::kitti_bin: return load_kitti_bin(path);
        case PointFormat::csv: return load_csv(path);
    }
    throw std::invalid_argument("load_points: unknown format");
}

PointCloud crop_points(const PointCloud& cloud, const CropRange& range) {
    for (int a = 0; a < 3; ++a) {
        if (!(range.min[a] < range.max[a])) {
            throw std::invalid_argument("crop_points: range min must be < max per axis");
        }
    }
    PointCloud out;
    out.feats.resize(cloud.size(), cloud.feats.cols());
    int64_t kept = 0;
    for (int64_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.xyz[i];
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
            inside &= (double(p[a]) >= range.min[a] && double(p[a]) < range.max[a]);
        }
        if (!inside) continue;
        out.xyz.push_back(p);
        out.feats.row(kept++) = cloud.feats.row(i);
    }
    out.feats.conservativeResize(kept, cloud.feats.cols());
    return out;
}

SparseVoxelGrid voxelize(const PointCloud& cloud, const VoxelizationSpec& spec,
                         int feature_dim, int32_t batch) {
    const int in_dim = cloud.feature_dim();
    if (feature_dim < in_dim + 1) {
        throw std::invalid_argument("voxelize: feature_dim must be >= point feature dim + 1 "
                                    "(count channel); got " + std::to_string(feature_dim) +
                                    " for " + std::to_string(in_dim) + " point channels");
    }
    if (batch < 0) throw std::invalid_argument("voxelize: batch index must be >= 0");

    struct Accum {
        int32_t index;
        int64_t count = 0;
        std::vector<double> sum;
    };
    std::unordered_map<int64_t, Accum> cells;
    std::vector<VoxelCoord> coords;

    for (int64_t i = 0; i < cloud.size(); ++i) {
        VoxelCoord c;
        c.b = batch;
        int32_t* axes[3] = {&c.x, &c.y, &c.z};
        for (int a = 0; a < 3; ++a) {
            const double rel = (double(cloud.xyz[i][a]) - spec.origin[a]) / spec.voxel_size[a];
            *axes[a] = static_cast<int32_t>(std::floor(rel));
        }
        if (!spec.extent.contains(c.x, c.y, c.z)) {
            throw std::out_of_range("voxelize: point " + std::to_string(i) +
                                    " falls outside the grid extent; crop first");
        }
        const int64_t key = flatten_key(c, spec.extent);
        auto [it, inserted] = cells.try_emplace(key);
        if (inserted) {
            it->second.index = static_cast<int32_t>(coords.size());
            it->second.sum.assign(in_dim, 0.0);
            coords.push_back(c);
        }
        it->second.count += 1;
        for (int f = 0; f < in_dim; ++f) it->second.sum[f] += double(cloud.feats(i, f));
    }

    MatrixF features = MatrixF::Zero(static_cast<int64_t>(coords.size()), feature_dim);
    for (const auto& [key, acc] : cells) {
        for (int f = 0; f < in_dim; ++f) {
            features(acc.index, f) = static_cast<float>(acc.sum[f] / double(acc.count));
        }
        features(acc.index, feature_dim - 1) = static_cast<float>(acc.count);
    }
    return build_hash(spec.extent, std::move(coords), std::move(features));
}

VoxelizationSpec make_spec(const CropRange& range, const Eigen::Vector3d& voxel_size) {
    VoxelizationSpec spec;
    spec.voxel_size = voxel_size;
    spec.origin = range.min;
    int32_t* axes[3] = {&spec.extent.x, &spec.extent.y, &spec.extent.z};
    for (int a = 0; a < 3; ++a) {
        if (!(voxel_size[a] > 0.0)) {
            throw std::invalid_argument("make_spec: voxel_size must be > 0 per axis");
        }
        const double ratio = (range.max[a] - range.min[a]) / voxel_size[a];
        const double nearest = std::round(ratio);
        // Snap ratios that divide evenly up to rounding; otherwise round up.
        const bool exact = std::abs(ratio - nearest) <= 1e-9 * std::max(1.0, ratio);
        *axes[a] = static_cast<int32_t>(exact ? nearest : std::ceil(ratio));
        if (*axes[a] < 1) *axes[a] = 1;
    }
    return spec;
}

CropRange waymo_range() {
    return {{-75.2, -75.2, -2.0}, {75.2, 75.2, 4.0}};
}

VoxelizationSpec waymo_spec() {
    return make_spec(waymo_range(), {0.4, 0.4, 0.6});
}

CropRange kitti_range() {
    return {{0.0, -40.0, -3.0}, {70.4, 40.0, 1.0}};
}

VoxelizationSpec kitti_spec() {
    return make_spec(kitti_range(), {0.32, 0.32, 0.4});
}

}  // namespace msvt
