#include "pbev/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "pbev/rng.hpp"
#include "pbev/sampling.hpp"

namespace pbev {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kLidarHeight = 1.0;
constexpr double kLidarRange = 80.0;
constexpr double kDistanceNorm = 100.0;
} // namespace

void SceneSpec::validate() const {
    if (ego_poses.empty()) throw std::invalid_argument("SceneSpec: needs at least one frame");
    for (const auto& b : boxes) {
        if (!(b.hx > 0.0) || !(b.hy > 0.0) || !(b.height > 0.0)) {
            throw std::invalid_argument("SceneSpec: box extents must be positive");
        }
    }
}

std::pair<double, double> box_center_at(const BoxSpec& box, int frame, double dt) {
    const double back = frame * dt;
    return {box.cx - box.vx * back, box.cy - box.vy * back};
}

Vec3 world_to_ego(const EgoPose& pose, const Vec3& p) {
    const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
    const double dx = p.x - pose.x, dy = p.y - pose.y;
    return {c * dx + s * dy, -s * dx + c * dy, p.z};
}

Vec3 ego_to_world(const EgoPose& pose, const Vec3& p) {
    const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
    return {pose.x + c * p.x - s * p.y, pose.y + s * p.x + c * p.y, p.z};
}

namespace {

struct FrameBox {
    double cx, cy, c, s, hx, hy, height;

    // world (x,y) -> box-local
    inline std::pair<double, double> to_local(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        return {c * dx + s * dy, -s * dx + c * dy};
    }
    inline bool footprint_contains(double x, double y) const {
        const auto [lx, ly] = to_local(x, y);
        return std::abs(lx) <= hx && std::abs(ly) <= hy;
    }
};

std::vector<FrameBox> boxes_at_frame(const SceneSpec& spec, int frame) {
    std::vector<FrameBox> out;
    out.reserve(spec.boxes.size());
    for (const auto& b : spec.boxes) {
        const auto [cx, cy] = box_center_at(b, frame, spec.dt);
        out.push_back({cx, cy, std::cos(b.yaw), std::sin(b.yaw), b.hx, b.hy, b.height});
    }
    return out;
}

// Slab test of a world-space ray against the box volume. Returns the
// nearest hit distance > 0, or +inf.
double ray_box_hit(const FrameBox& box, const Vec3& origin, const Vec3& dir) {
    // into box-local axes (rotate xy by -yaw, translate)
    const double ox = box.c * (origin.x - box.cx) + box.s * (origin.y - box.cy);
    const double oy = -box.s * (origin.x - box.cx) + box.c * (origin.y - box.cy);
    const double oz = origin.z;
    const double dx = box.c * dir.x + box.s * dir.y;
    const double dy = -box.s * dir.x + box.c * dir.y;
    const double dz = dir.z;

    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    const double lo[3] = {-box.hx, -box.hy, 0.0};
    const double hi[3] = {box.hx, box.hy, box.height};
    const double o[3] = {ox, oy, oz};
    const double d[3] = {dx, dy, dz};
    for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0) {
            if (o[a] < lo[a] || o[a] > hi[a]) return std::numeric_limits<double>::infinity();
            continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::numeric_limits<double>::infinity();
    }
    if (t1 <= 0.0) return std::numeric_limits<double>::infinity();
    return t0 > 0.0 ? t0 : t1;  // origin inside the box hits the exit face
}

// d = K^{-1} (u,v,1) by back substitution (K upper-triangular).
Vec3 pixel_ray_dir(const Mat3& K, double u, double v) {
    const double z = 1.0 / K(2, 2);
    const double y = (v - K(1, 2) * z) / K(1, 1);
    const double x = (u - K(0, 1) * y - K(0, 2) * z) / K(0, 0);
    return {x, y, z};
}

} // namespace

std::vector<uint8_t> rasterize_gt(const SceneSpec& spec, const BevGrid& grid, int frame) {
    spec.validate();
    if (frame < 0 || frame >= spec.frames()) {
        throw std::out_of_range("rasterize_gt: frame out of range");
    }
    const auto boxes = boxes_at_frame(spec, frame);
    const EgoPose& pose = spec.ego_poses[frame];
    std::vector<uint8_t> mask(grid.n_cells(), 0);
    for (int iy = 0; iy < grid.ny(); ++iy) {
        for (int ix = 0; ix < grid.nx(); ++ix) {
            const auto [ex, ey] = grid.cell_to_world(ix, iy);
            const Vec3 w = ego_to_world(pose, {ex, ey, 0.0});
            for (const auto& b : boxes) {
                if (b.footprint_contains(w.x, w.y)) {
                    mask[grid.flat_index(ix, iy)] = 1;
                    break;
                }
            }
        }
    }
    return mask;
}

std::vector<FeatureVolume> render_features(const SceneSpec& spec, const CameraRig& rig,
                                           int frame, int channels, double noise_sigma,
                                           uint64_t seed) {
    spec.validate();
    if (channels < 2) throw std::invalid_argument("render_features: needs >= 2 channels");
    const auto boxes = boxes_at_frame(spec, frame);
    const EgoPose& pose = spec.ego_poses[frame];
    const double cyaw = std::cos(pose.yaw), syaw = std::sin(pose.yaw);

    std::vector<FeatureVolume> vols;
    vols.reserve(rig.n_cam());
    for (const CameraModel& cam : rig.cameras()) {
        FeatureVolume vol(cam.camera_id(), channels, cam.feat_height(), cam.feat_width());
        const Vec3 center_ego = cam.center();
        const Vec3 origin = ego_to_world(pose, center_ego);
        const Mat3 rot_t = cam.rotation().transposed();
        for (int py = 0; py < cam.feat_height(); ++py) {
            for (int px = 0; px < cam.feat_width(); ++px) {
                const Vec3 d_cam = pixel_ray_dir(cam.intrinsics(), px, py);
                const Vec3 d_ego = rot_t * d_cam;
                const Vec3 dir{cyaw * d_ego.x - syaw * d_ego.y,
                               syaw * d_ego.x + cyaw * d_ego.y, d_ego.z};
                double nearest = std::numeric_limits<double>::infinity();
                for (const auto& b : boxes) {
                    nearest = std::min(nearest, ray_box_hit(b, origin, dir));
                }
                const bool hit = std::isfinite(nearest);
                // slab distances are in units of |dir|
                const double metric = hit ? nearest * dir.norm() : 0.0;
                vol.at(0, 0, py, px) = hit ? 1.0 : 0.0;
                vol.at(0, 1, py, px) = hit ? std::min(metric, kDistanceNorm) / kDistanceNorm : 0.0;
                for (int c = 2; c < channels; ++c) {
                    const uint64_t h = hash_mix(seed ^ 0x9e3779b9ULL, frame,
                                                (static_cast<uint64_t>(cam.camera_id()) << 32) |
                                                    (static_cast<uint64_t>(py) * cam.feat_width() + px),
                                                c);
                    Rng rng(h);
                    vol.at(0, c, py, px) = noise_sigma * rng.next_normal();
                }
            }
        }
        vols.push_back(std::move(vol));
    }
    return vols;
}

std::vector<Vec3> simulate_lidar(const SceneSpec& spec, int frame, int n_beams, uint64_t seed) {
    spec.validate();
    if (n_beams < 1) return {};
    const auto boxes = boxes_at_frame(spec, frame);
    const EgoPose& pose = spec.ego_poses[frame];

    // Seed fixes a global phase; the azimuth lattice still nests when
    // n_beams doubles.
    Rng phase_rng(hash_mix(seed, 0x11dA4));
    const double phase = 2.0 * kPi * phase_rng.next_real();

    const Vec3 origin = ego_to_world(pose, {0.0, 0.0, kLidarHeight});
    std::vector<Vec3> hits;
    for (int b = 0; b < n_beams; ++b) {
        const double az_ego = phase + 2.0 * kPi * b / n_beams;
        const double az = az_ego + pose.yaw;
        const Vec3 dir{std::cos(az), std::sin(az), 0.0};
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& box : boxes) {
            nearest = std::min(nearest, ray_box_hit(box, origin, dir));
        }
        if (nearest <= kLidarRange) {
            const Vec3 world{origin.x + nearest * dir.x, origin.y + nearest * dir.y,
                             kLidarHeight};
            hits.push_back(world_to_ego(pose, world));
        }
    }
    return hits;
}

RenderedFrame render_frame(const SceneSpec& spec, const CameraRig& rig, const BevGrid& grid,
                           int frame, int channels, double noise_sigma, int lidar_beams) {
    RenderedFrame out;
    out.vols = render_features(spec, rig, frame, channels, noise_sigma, spec.seed);
    out.gt_mask = rasterize_gt(spec, grid, frame);
    out.lidar = simulate_lidar(spec, frame, lidar_beams, spec.seed);
    return out;
}

namespace {

nlohmann::json scene_to_json(const SceneSpec& spec) {
    nlohmann::json j;
    j["schema"] = "pbev-scene/1";
    j["dt"] = spec.dt;
    j["seed"] = spec.seed;
    auto& boxes = j["boxes"] = nlohmann::json::array();
    for (const auto& b : spec.boxes) {
        boxes.push_back({{"cx", b.cx},
                         {"cy", b.cy},
                         {"hx", b.hx},
                         {"hy", b.hy},
                         {"yaw", b.yaw},
                         {"height", b.height},
                         {"vx", b.vx},
                         {"vy", b.vy}});
    }
    auto& poses = j["ego_poses"] = nlohmann::json::array();
    for (const auto& p : spec.ego_poses) {
        poses.push_back({{"x", p.x}, {"y", p.y}, {"yaw", p.yaw}});
    }
    return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema").get<std::string>() != "pbev-scene/1") {
            throw std::runtime_error("scene schema: unsupported version tag");
        }
        SceneSpec spec;
        spec.dt = j.at("dt").get<double>();
        spec.seed = j.at("seed").get<uint64_t>();
        for (const auto& b : j.at("boxes")) {
            BoxSpec box;
            box.cx = b.at("cx").get<double>();
            box.cy = b.at("cy").get<double>();
            box.hx = b.at("hx").get<double>();
            box.hy = b.at("hy").get<double>();
            box.yaw = b.at("yaw").get<double>();
            box.height = b.at("height").get<double>();
            box.vx = b.value("vx", 0.0);
            box.vy = b.value("vy", 0.0);
            spec.boxes.push_back(box);
        }
        for (const auto& p : j.at("ego_poses")) {
            spec.ego_poses.push_back(
                {p.at("x").get<double>(), p.at("y").get<double>(), p.at("yaw").get<double>()});
        }
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("scene schema: ") + e.what());
    }
}

} // namespace

void save_scene(const SceneSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_scene: cannot open " + path);
    out << scene_to_json(spec).dump(2) << "\n";
}

SceneSpec load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_scene: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("load_scene: ") + e.what());
    }
    return scene_from_json(j);
}

namespace {

SceneSpec random_scene(uint64_t scene_seed, int frames) {
    Rng rng(scene_seed);
    SceneSpec spec;
    spec.seed = scene_seed;
    spec.dt = 0.25;

    const int n_boxes = 2 + static_cast<int>(rng.next_below(7));  // 2..8
    for (int i = 0; i < n_boxes; ++i) {
        BoxSpec b;
        // keep clear of the ego and mostly inside the grid
        do {
            b.cx = -40.0 + 80.0 * rng.next_real();
            b.cy = -40.0 + 80.0 * rng.next_real();
        } while (b.cx * b.cx + b.cy * b.cy < 36.0);
        b.hx = 1.8 + 0.8 * rng.next_real();
        b.hy = 0.8 + 0.3 * rng.next_real();
        b.yaw = 2.0 * kPi * rng.next_real();
        b.height = 1.5 + 0.7 * rng.next_real();
        if (rng.next_real() < 0.5) {
            const double speed = 3.0 * rng.next_real();
            const double heading = 2.0 * kPi * rng.next_real();
            b.vx = speed * std::cos(heading);
            b.vy = speed * std::sin(heading);
        }
        spec.boxes.push_back(b);
    }

    // present at the origin, constant speed and yaw rate into the past
    const double speed = 2.0 + 4.0 * rng.next_real();
    const double yaw_rate = -0.15 + 0.3 * rng.next_real();
    for (int t = 0; t < frames; ++t) {
        const double back = t * spec.dt;
        EgoPose p;
        p.yaw = -yaw_rate * back;
        p.x = -speed * back * std::cos(p.yaw);
        p.y = -speed * back * std::sin(p.yaw);
        spec.ego_poses.push_back(p);
    }
    return spec;
}

} // namespace

BenchmarkScenes make_benchmark_scenes(uint64_t master_seed, int frames) {
    BenchmarkScenes set;
    for (int i = 0; i < 64; ++i) {
        set.train.push_back(random_scene(hash_mix(master_seed, 1, i), frames));
    }
    for (int i = 0; i < 16; ++i) {
        set.eval.push_back(random_scene(hash_mix(master_seed, 2, i), frames));
    }
    return set;
}

void save_scene_set(const BenchmarkScenes& set, const std::string& path) {
    nlohmann::json j;
    j["schema"] = "pbev-scene-set/1";
    auto& train = j["train"] = nlohmann::json::array();
    for (const auto& s : set.train) train.push_back(scene_to_json(s));
    auto& eval = j["eval"] = nlohmann::json::array();
    for (const auto& s : set.eval) eval.push_back(scene_to_json(s));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_scene_set: cannot open " + path);
    out << j.dump(2) << "\n";
}

BenchmarkScenes load_scene_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_scene_set: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
        if (j.at("schema").get<std::string>() != "pbev-scene-set/1") {
            throw std::runtime_error("scene-set schema: unsupported version tag");
        }
        BenchmarkScenes set;
        for (const auto& s : j.at("train")) set.train.push_back(scene_from_json(s));
        for (const auto& s : j.at("eval")) set.eval.push_back(scene_from_json(s));
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("load_scene_set: ") + e.what());
    }
}

} // namespace pbev
