#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pbev/geometry.hpp"
#include "pbev/sparse_pulling.hpp"

namespace pbev {

/// Upright box in world coordinates: yawed rectangular footprint around
/// (cx,cy), vertical extent [0,height]. Boxes move linearly; frame t is
/// t*dt seconds in the past, so the center at frame t is (cx,cy) - v*t*dt.
struct BoxSpec {
    double cx = 0.0, cy = 0.0;
    double hx = 1.0, hy = 1.0;  // half-extents, > 0
    double yaw = 0.0;
    double height = 1.8;
    double vx = 0.0, vy = 0.0;
};

/// Ego pose in world coordinates at one frame (frame 0 = present).
struct EgoPose {
    double x = 0.0, y = 0.0, yaw = 0.0;
};

struct SceneSpec {
    std::vector<BoxSpec> boxes;
    std::vector<EgoPose> ego_poses;  // one per frame, index 0 = present
    double dt = 0.25;                // seconds between frames
    uint64_t seed = 0;               // drives feature noise

    int frames() const { return static_cast<int>(ego_poses.size()); }
    // Throws std::invalid_argument on degenerate boxes or zero frames.
    void validate() const;
};

struct RenderedFrame {
    std::vector<FeatureVolume> vols;
    std::vector<uint8_t> gt_mask;  // ny*nx
    std::vector<Vec3> lidar;       // ego-frame returns
};

// Box center at frame t (t*dt seconds in the past).
std::pair<double, double> box_center_at(const BoxSpec& box, int frame, double dt);

// World point expressed in the ego frame of `pose`, and back.
Vec3 world_to_ego(const EgoPose& pose, const Vec3& p);
Vec3 ego_to_world(const EgoPose& pose, const Vec3& p);

// Cell true iff its center lies inside some box footprint, in the ego
// frame of the requested frame.
std::vector<uint8_t> rasterize_gt(const SceneSpec& spec, const BevGrid& grid, int frame);

// Analytic camera features. Channel 0: 1 where the pixel ray hits a box,
// channel 1: normalized first-hit distance, channels >= 2: seeded
// Gaussian noise. Pure function of (spec, frame, C, noise_sigma, seed).
std::vector<FeatureVolume> render_features(const SceneSpec& spec, const CameraRig& rig,
                                           int frame, int channels, double noise_sigma,
                                           uint64_t seed);

// Horizontal single-line sweep from the ego at 1 m height; n_beams
// azimuth-uniform rays, nearest box-surface hit within 80 m. Doubling
// n_beams keeps all previous azimuths. Returns ego-frame points.
std::vector<Vec3> simulate_lidar(const SceneSpec& spec, int frame, int n_beams, uint64_t seed);

// Everything needed for one frame of training/eval.
RenderedFrame render_frame(const SceneSpec& spec, const CameraRig& rig, const BevGrid& grid,
                           int frame, int channels, double noise_sigma, int lidar_beams = 720);

// JSON persistence ("pbev-scene/1"); numbers survive round-trips
// bit-exactly. Schema violations throw std::runtime_error.
void save_scene(const SceneSpec& spec, const std::string& path);
SceneSpec load_scene(const std::string& path);

struct BenchmarkScenes {
    std::vector<SceneSpec> train;
    std::vector<SceneSpec> eval;
};

// The fixed desk-scale benchmark: 64 train + 16 eval scenes with 2..8
// boxes each, deterministic in master_seed.
BenchmarkScenes make_benchmark_scenes(uint64_t master_seed = 42, int frames = 9);

void save_scene_set(const BenchmarkScenes& set, const std::string& path);
BenchmarkScenes load_scene_set(const std::string& path);

} // namespace pbev
