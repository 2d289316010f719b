#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pbev/geometry.hpp"

namespace pbev {

/// One camera's feature planes, optionally stacked along a batch axis.
/// Layout data[((b*C + c)*H + y)*W + x].
struct FeatureVolume {
    int camera_id = 0;
    int batch = 1;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    FeatureVolume() = default;
    FeatureVolume(int camera_id, int channels, int height, int width, int batch = 1);

    size_t size() const { return data.size(); }
    double& at(int b, int c, int y, int x) {
        return data[((static_cast<size_t>(b) * channels + c) * height + y) * width + x];
    }
    double at(int b, int c, int y, int x) const {
        return data[((static_cast<size_t>(b) * channels + c) * height + y) * width + x];
    }

    // Throws std::invalid_argument on any non-finite entry.
    void check_finite() const;
};

/// Flat list of 3D points to pull features for, in arbitrary order.
/// cell_index records which (ix,iy,iz) pillar slot each point came from.
struct PointBatch {
    struct CellRef {
        int ix = 0, iy = 0, iz = 0;
    };

    std::vector<Vec3> points;
    std::vector<int32_t> batch_index;
    std::vector<CellRef> cell_index;

    size_t size() const { return points.size(); }
    void push(const Vec3& p, int32_t b, CellRef ref) {
        points.push_back(p);
        batch_index.push_back(b);
        cell_index.push_back(ref);
    }
    // Throws std::invalid_argument if the parallel arrays disagree.
    void validate() const;
};

/// The batch reference table: per camera, the slots of the points that
/// camera actually sees, with their projected feature-pixel coordinates.
/// Per-camera lists have different lengths by construction.
struct VisibilityTable {
    struct Entry {
        uint32_t slot;  // index into the PointBatch
        double u, v;
    };

    std::vector<std::vector<Entry>> per_camera;
    std::vector<int32_t> seen_count;   // per point
    std::vector<int32_t> batch_index;  // per point, copied from the batch

    size_t n_points() const { return seen_count.size(); }
    uint64_t total_entries() const;
};

struct PulledFeatures {
    int channels = 0;
    std::vector<double> data;       // n_points x channels, row-major
    std::vector<uint8_t> mask;      // 1 where seen_count > 0
    uint64_t interp_ops = 0;        // number of bilinear interpolations run

    size_t n_points() const { return mask.size(); }
    std::span<const double> point(size_t i) const {
        return {data.data() + i * channels, static_cast<size_t>(channels)};
    }
};

// Four-corner bilinear blend of volume slice b at continuous feature-pixel
// (u,v); the result lands in out[0..C). Preconditions 0<=u<=W-1, 0<=v<=H-1
// are enforced (throws std::invalid_argument) -- callers are expected to
// have filtered by visibility already.
void bilinear_sample(const FeatureVolume& vol, int b, double u, double v, double* out);
std::vector<double> bilinear_sample(const FeatureVolume& vol, double u, double v);

// Projects the batch into every camera of the rig and keeps exactly the
// visible (camera, point) pairs.
VisibilityTable build_visibility_table(const CameraRig& rig, const PointBatch& batch);

// The sparse kernel: one bilinear interpolation per table entry, averaged
// over the cameras seeing each point. Points seen by no camera come back
// zero with mask=0.
PulledFeatures sparse_pull(std::span<const FeatureVolume> vols, const VisibilityTable& table);

// Deliberately wasteful reference path: projects every point into every
// camera, samples at clamped coordinates, masks invisible contributions
// to zero, then averages. Mathematically identical output to sparse_pull;
// interp_ops comes back as n_points * n_cam. Kept independent of the
// sparse path (its own projection loop and its own interpolation code).
PulledFeatures naive_pull_oracle(std::span<const FeatureVolume> vols, const CameraRig& rig,
                                 const PointBatch& batch);

// Scatter-adds grad_out (n_points x C) back into per-camera volume
// gradients through the bilinear corner weights and the 1/seen_count
// averaging. Gradients flow to features only, never to coordinates.
// Serial accumulation in table order; bit-reproducible.
std::vector<FeatureVolume> sparse_pull_backward(std::span<const FeatureVolume> vols,
                                                const VisibilityTable& table,
                                                std::span<const double> grad_out);

// Rough live-allocation estimates for the benchmark CSV.
uint64_t sparse_pull_workspace_bytes(const VisibilityTable& table, int channels);
uint64_t naive_pull_workspace_bytes(size_t n_points, int n_cam, int channels);

} // namespace pbev
