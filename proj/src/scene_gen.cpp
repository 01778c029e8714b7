#include "msvt/scene_gen.hpp"

#include <cmath>
#include <random>

namespace msvt {

namespace {

class SceneRng {
public:
    explicit SceneRng(uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        const double u = double(gen_() >> 11) * 0x1.0p-53;
        return lo + u * (hi - lo);
    }

private:
    std::mt19937_64 gen_;
};

// Keeps a center coordinate away from voxel boundaries (in units of one
// voxel) so floor() of a vote landing there is stable under float error.
double nudge_off_boundary(double value, double origin, double voxel) {
    const double cell = (value - origin) / voxel;
    const double frac = cell - std::floor(cell);
    if (frac < 0.05) return value + 0.1 * voxel;
    if (frac > 0.95) return value - 0.1 * voxel;
    return value;
}

}  // namespace

SyntheticScene generate_scene(const SceneParams& params, const Eigen::Vector3d& voxel_hint) {
    SceneRng rng(params.seed);
    SyntheticScene scene;

    const Eigen::Vector3d& lo = params.range.min;
    const Eigen::Vector3d& hi = params.range.max;

    // Place non-overlapping boxes; rejection-sample centers with a margin.
    for (int b = 0; b < params.num_boxes; ++b) {
        GtBox box;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            for (int a = 0; a < 3; ++a) {
                box.size[a] = rng.uniform(params.box_size_min[a], params.box_size_max[a]);
            }
            box.yaw = rng.uniform(0.0, 2.0 * M_PI);
            const double margin = box.size.head<2>().norm();
            box.center[0] = rng.uniform(lo[0] + margin, hi[0] - margin);
            box.center[1] = rng.uniform(lo[1] + margin, hi[1] - margin);
            box.center[2] = params.ground_z + box.size[2] / 2.0 + 0.1;
            for (int a = 0; a < 3; ++a) {
                box.center[a] = nudge_off_boundary(box.center[a], params.range.min[a],
                                                   voxel_hint[a]);
            }
            placed = true;
            for (const auto& other : scene.boxes) {
                if ((other.center - box.center).head<2>().norm() < params.min_center_gap) {
                    placed = false;
                    break;
                }
            }
        }
        if (placed) scene.boxes.push_back(box);
    }

    std::vector<Eigen::Vector3f> xyz;
    std::vector<float> intensity;

    // Surface-sample each box: faces picked by area, points uniform per face.
    for (const auto& box : scene.boxes) {
        const double l = box.size[0], w = box.size[1], h = box.size[2];
        const double areas[6] = {w * h, w * h, l * h, l * h, l * w, l * w};
        double total = 0.0;
        for (double a : areas) total += a;
        const double c = std::cos(box.yaw);
        const double s = std::sin(box.yaw);

        for (int p = 0; p < params.points_per_box; ++p) {
            double pick = rng.uniform(0.0, total);
            int face = 0;
            while (face < 5 && pick > areas[face]) {
                pick -= areas[face];
                ++face;
            }
            Eigen::Vector3d local;
            const double u = rng.uniform(-0.5, 0.5);
            const double v = rng.uniform(-0.5, 0.5);
            switch (face) {
                case 0: local = {+l / 2, u * w, v * h}; break;
                case 1: local = {-l / 2, u * w, v * h}; break;
                case 2: local = {u * l, +w / 2, v * h}; break;
                case 3: local = {u * l, -w / 2, v * h}; break;
                case 4: local = {u * l, v * w, +h / 2}; break;
                default: local = {u * l, v * w, -h / 2}; break;
            }
            Eigen::Vector3d world = box.center;
            world[0] += c * local[0] - s * local[1];
            world[1] += s * local[0] + c * local[1];
            world[2] += local[2];
            bool inside = true;
            for (int a = 0; a < 3; ++a) {
                inside &= world[a] >= lo[a] && world[a] < hi[a];
            }
            if (!inside) continue;
            xyz.push_back(world.cast<float>());
            intensity.push_back(static_cast<float>(rng.uniform(0.2, 1.0)));
        }
    }

    for (int p = 0; p < params.ground_points; ++p) {
        Eigen::Vector3d g;
        g[0] = rng.uniform(lo[0], hi[0]);
        g[1] = rng.uniform(lo[1], hi[1]);
        g[2] = params.ground_z + rng.uniform(-params.ground_noise, params.ground_noise);
        if (g[2] < lo[2] || g[2] >= hi[2]) continue;
        xyz.push_back(g.cast<float>());
        intensity.push_back(static_cast<float>(rng.uniform(0.05, 0.4)));
    }

    scene.cloud.xyz = std::move(xyz);
    scene.cloud.feats.resize(static_cast<int64_t>(scene.cloud.xyz.size()), 1);
    for (int64_t i = 0; i < scene.cloud.size(); ++i) scene.cloud.feats(i, 0) = intensity[i];
    return scene;
}

}  // namespace msvt
