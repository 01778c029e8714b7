#include "msvt/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "containers are little-endian; big-endian hosts are unsupported");

namespace msvt {

namespace {

constexpr char kGridMagic[8] = {'M', 'S', 'V', 'T', 'G', 'R', 'D', '1'};
constexpr char kWeightMagic[8] = {'M', 'S', 'V', 'T', 'W', 'T', 'S', '1'};
constexpr char kBevMagic[8] = {'M', 'S', 'V', 'T', 'B', 'E', 'V', '1'};
constexpr uint32_t kWeightVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error(std::string("container: truncated while reading ") + what);
    return v;
}

void write_grid(const SparseVoxelGrid& grid, std::ostream& out) {
    out.write(kGridMagic, sizeof(kGridMagic));
    put<int32_t>(out, grid.batch());
    put<int32_t>(out, grid.extent().x);
    put<int32_t>(out, grid.extent().y);
    put<int32_t>(out, grid.extent().z);
    put<int64_t>(out, grid.size());
    put<int32_t>(out, grid.channels());
    for (const auto& c : grid.coords()) {
        put<int32_t>(out, c.b);
        put<int32_t>(out, c.x);
        put<int32_t>(out, c.y);
        put<int32_t>(out, c.z);
    }
    out.write(reinterpret_cast<const char*>(grid.features().data()),
              std::streamsize(grid.size()) * grid.channels() * sizeof(float));
}

SparseVoxelGrid read_grid(std::istream& in, const std::string& what) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kGridMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("container: " + what + " is not a grid file (bad magic)");
    }
    Extent extent;
    const int32_t batch = get<int32_t>(in, "batch");
    extent.x = get<int32_t>(in, "extent");
    extent.y = get<int32_t>(in, "extent");
    extent.z = get<int32_t>(in, "extent");
    const int64_t n = get<int64_t>(in, "voxel count");
    const int32_t channels = get<int32_t>(in, "channel count");
    if (n < 0 || channels < 0) throw std::runtime_error("container: negative sizes in " + what);

    std::vector<VoxelCoord> coords(n);
    for (int64_t i = 0; i < n; ++i) {
        coords[i].b = get<int32_t>(in, "coord");
        coords[i].x = get<int32_t>(in, "coord");
        coords[i].y = get<int32_t>(in, "coord");
        coords[i].z = get<int32_t>(in, "coord");
        if (coords[i].b != batch) {
            throw std::runtime_error("container: coord batch mismatch in " + what);
        }
    }
    MatrixF features(n, channels);
    in.read(reinterpret_cast<char*>(features.data()),
            std::streamsize(n) * channels * sizeof(float));
    if (!in) throw std::runtime_error("container: truncated features in " + what);
    return build_hash(extent, std::move(coords), std::move(features));
}

void write_tensor(std::ostream& out, const std::string& name, const float* data,
                  std::vector<int64_t> dims) {
    put<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    put<uint32_t>(out, static_cast<uint32_t>(dims.size()));
    int64_t total = 1;
    for (int64_t d : dims) {
        put<int64_t>(out, d);
        total *= d;
    }
    out.write(reinterpret_cast<const char*>(data), std::streamsize(total) * sizeof(float));
}

struct Tensor {
    std::vector<int64_t> dims;
    std::vector<float> data;
};

using TensorMap = std::map<std::string, Tensor>;

void write_block(std::ostream& out, const std::string& prefix, const BlockWeights& w,
                 uint32_t& count) {
    auto mat = [&](const std::string& name, const MatrixF& m) {
        write_tensor(out, prefix + "." + name, m.data(), {m.rows(), m.cols()});
        ++count;
    };
    auto vec = [&](const std::string& name, const VectorF& v) {
        write_tensor(out, prefix + "." + name, v.data(), {v.size()});
        ++count;
    };
    mat("w_q", w.w_q);
    for (size_t m = 0; m < w.w_k.size(); ++m) {
        mat("w_k." + std::to_string(m), w.w_k[m]);
        mat("w_v." + std::to_string(m), w.w_v[m]);
        mat("rpe." + std::to_string(m), w.rpe_table[m]);
    }
    mat("ffn.w1", w.ffn_w1);
    vec("ffn.b1", w.ffn_b1);
    mat("ffn.w2", w.ffn_w2);
    vec("ffn.b2", w.ffn_b2);
    vec("ln.gamma", w.ln_gamma);
    vec("ln.beta", w.ln_beta);
}

const Tensor& need(const TensorMap& tensors, const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw std::runtime_error("weights: missing tensor '" + name + "'");
    }
    return it->second;
}

MatrixF tensor_matrix(const TensorMap& tensors, const std::string& name, int64_t rows,
                      int64_t cols) {
    const Tensor& t = need(tensors, name);
    if (t.dims.size() != 2 || t.dims[0] != rows || t.dims[1] != cols) {
        throw std::runtime_error("weights: tensor '" + name + "' has the wrong shape");
    }
    MatrixF m(rows, cols);
    std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(float));
    return m;
}

VectorF tensor_vector(const TensorMap& tensors, const std::string& name, int64_t size) {
    const Tensor& t = need(tensors, name);
    if (t.dims.size() != 1 || t.dims[0] != size) {
        throw std::runtime_error("weights: tensor '" + name + "' has the wrong shape");
    }
    VectorF v(size);
    std::memcpy(v.data(), t.data.data(), t.data.size() * sizeof(float));
    return v;
}

BlockWeights read_block(const TensorMap& tensors, const std::string& prefix,
                        const HeadGroupConfig& hc, int ffn_hidden_mult,
                        const std::array<int32_t, 3>& r_max) {
    const int c = hc.channels;
    const int width = hc.group_width();
    const int hidden = c * ffn_hidden_mult;
    const int64_t entries = rpe_table_entries(r_max);

    BlockWeights w;
    w.r_max = r_max;
    w.w_q = tensor_matrix(tensors, prefix + ".w_q", c, c);
    for (int m = 0; m < hc.groups(); ++m) {
        const std::string s = std::to_string(m);
        w.w_k.push_back(tensor_matrix(tensors, prefix + ".w_k." + s, c, width));
        w.w_v.push_back(tensor_matrix(tensors, prefix + ".w_v." + s, c, width));
        w.rpe_table.push_back(tensor_matrix(tensors, prefix + ".rpe." + s, width, entries));
    }
    w.ffn_w1 = tensor_matrix(tensors, prefix + ".ffn.w1", c, hidden);
    w.ffn_b1 = tensor_vector(tensors, prefix + ".ffn.b1", hidden);
    w.ffn_w2 = tensor_matrix(tensors, prefix + ".ffn.w2", hidden, c);
    w.ffn_b2 = tensor_vector(tensors, prefix + ".ffn.b2", c);
    w.ln_gamma = tensor_vector(tensors, prefix + ".ln.gamma", c);
    w.ln_beta = tensor_vector(tensors, prefix + ".ln.beta", c);
    return w;
}

MatrixF to_f32(const MatrixD& m) { return m.cast<float>(); }
VectorF to_f32(const VectorD& v) { return v.cast<float>(); }

}  // namespace

void save_grid(const SparseVoxelGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("container: cannot write " + path);
    write_grid(grid, out);
    if (!out) throw std::runtime_error("container: write failed for " + path);
}

SparseVoxelGrid load_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("container: cannot open " + path);
    return read_grid(in, path);
}

std::string grid_bytes(const SparseVoxelGrid& grid) {
    std::ostringstream out(std::ios::binary);
    write_grid(grid, out);
    return out.str();
}

void save_weights(const ModelWeights& w, const std::string& path) {
    std::ostringstream body(std::ios::binary);
    uint32_t count = 0;
    for (size_t b = 0; b < w.blocks.size(); ++b) {
        write_block(body, "blocks." + std::to_string(b), w.blocks[b], count);
    }
    write_block(body, "pillar", w.pillar, count);
    write_block(body, "context", w.context, count);

    auto vote_mat = [&](const std::string& name, const MatrixD& m) {
        const MatrixF f = to_f32(m);
        write_tensor(body, "vote." + name, f.data(), {f.rows(), f.cols()});
        ++count;
    };
    auto vote_vec = [&](const std::string& name, const VectorD& v) {
        const VectorF f = to_f32(v);
        write_tensor(body, "vote." + name, f.data(), {f.size()});
        ++count;
    };
    vote_mat("offset.w1", w.vote.offset_w1);
    vote_vec("offset.b1", w.vote.offset_b1);
    vote_mat("offset.w2", w.vote.offset_w2);
    vote_vec("offset.b2", w.vote.offset_b2);
    vote_mat("obj.w1", w.vote.obj_w1);
    vote_vec("obj.b1", w.vote.obj_b1);
    vote_mat("obj.w2", w.vote.obj_w2);
    vote_vec("obj.b2", w.vote.obj_b2);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("container: cannot write " + path);
    out.write(kWeightMagic, sizeof(kWeightMagic));
    put<uint32_t>(out, kWeightVersion);
    put<uint32_t>(out, count);
    const std::string bytes = body.str();
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("container: write failed for " + path);
}

ModelWeights load_weights(const std::string& path, const PipelineConfig& cfg) {
    cfg.validate();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("container: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kWeightMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("container: " + path + " is not a weights file (bad magic)");
    }
    const uint32_t version = get<uint32_t>(in, "version");
    if (version != kWeightVersion) {
        throw std::runtime_error("container: unsupported weights version " +
                                 std::to_string(version) + " in " + path);
    }
    const uint32_t count = get<uint32_t>(in, "tensor count");

    TensorMap tensors;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = get<uint32_t>(in, "tensor name length");
        if (name_len > 4096) throw std::runtime_error("container: absurd tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t ndim = get<uint32_t>(in, "tensor rank");
        if (ndim > 4) throw std::runtime_error("container: absurd tensor rank");
        Tensor t;
        int64_t total = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            t.dims.push_back(get<int64_t>(in, "tensor dim"));
            if (t.dims.back() < 0 || t.dims.back() > (int64_t(1) << 32)) {
                throw std::runtime_error("container: absurd tensor dim");
            }
            total *= t.dims.back();
        }
        t.data.resize(static_cast<size_t>(total));
        in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(total) * sizeof(float));
        if (!in) throw std::runtime_error("container: truncated tensor '" + name + "'");
        if (!tensors.emplace(std::move(name), std::move(t)).second) {
            throw std::runtime_error("container: duplicate tensor name in " + path);
        }
    }

    const HeadGroupConfig hc = cfg.head_config();
    const auto r_max = cfg.largest_key_window();

    ModelWeights w;
    for (int b = 0; b < cfg.num_blocks; ++b) {
        w.blocks.push_back(read_block(tensors, "blocks." + std::to_string(b), hc,
                                      cfg.ffn_hidden_mult, r_max));
    }
    w.pillar = read_block(tensors, "pillar", hc, cfg.ffn_hidden_mult,
                          {1, 1, cfg.voxelization.extent.z});
    w.context = read_block(tensors, "context", hc, cfg.ffn_hidden_mult, r_max);

    const int c = cfg.channels;
    const int h = cfg.vote.hidden;
    w.vote.offset_w1 = tensor_matrix(tensors, "vote.offset.w1", c, h).cast<double>();
    w.vote.offset_b1 = tensor_vector(tensors, "vote.offset.b1", h).cast<double>();
    w.vote.offset_w2 = tensor_matrix(tensors, "vote.offset.w2", h, 3).cast<double>();
    w.vote.offset_b2 = tensor_vector(tensors, "vote.offset.b2", 3).cast<double>();
    w.vote.obj_w1 = tensor_matrix(tensors, "vote.obj.w1", c, h).cast<double>();
    w.vote.obj_b1 = tensor_vector(tensors, "vote.obj.b1", h).cast<double>();
    w.vote.obj_w2 = tensor_matrix(tensors, "vote.obj.w2", h, 1).cast<double>();
    w.vote.obj_b2 = tensor_vector(tensors, "vote.obj.b2", 1).cast<double>();
    return w;
}

void save_bev(const BevMap& bev, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("container: cannot write " + path);
    out.write(kBevMagic, sizeof(kBevMagic));
    put<int32_t>(out, bev.extent.x);
    put<int32_t>(out, bev.extent.y);
    put<int32_t>(out, bev.extent.z);
    put<int64_t>(out, static_cast<int64_t>(bev.cells.size()));
    put<int32_t>(out, static_cast<int32_t>(bev.features.cols()));
    for (const auto& c : bev.cells) {
        put<int32_t>(out, c[0]);
        put<int32_t>(out, c[1]);
    }
    out.write(reinterpret_cast<const char*>(bev.features.data()),
              std::streamsize(bev.features.size()) * sizeof(float));
    if (!out) throw std::runtime_error("container: write failed for " + path);
}

BevMap load_bev(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("container: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kBevMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("container: " + path + " is not a BEV file (bad magic)");
    }
    BevMap bev;
    bev.extent.x = get<int32_t>(in, "extent");
    bev.extent.y = get<int32_t>(in, "extent");
    bev.extent.z = get<int32_t>(in, "extent");
    const int64_t n = get<int64_t>(in, "cell count");
    const int32_t channels = get<int32_t>(in, "channel count");
    bev.cells.resize(n);
    for (auto& c : bev.cells) {
        c[0] = get<int32_t>(in, "cell");
        c[1] = get<int32_t>(in, "cell");
    }
    bev.features.resize(n, channels);
    in.read(reinterpret_cast<char*>(bev.features.data()),
            std::streamsize(n) * channels * sizeof(float));
    if (!in) throw std::runtime_error("container: truncated BEV features in " + path);
    return bev;
}

}  // namespace msvt
