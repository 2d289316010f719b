#include "pbev/sparse_pulling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pbev {

FeatureVolume::FeatureVolume(int camera_id_, int channels_, int height_, int width_, int batch_)
    : camera_id(camera_id_), batch(batch_), channels(channels_), height(height_), width(width_) {
    if (batch < 1 || channels < 1 || height < 1 || width < 1) {
        throw std::invalid_argument("FeatureVolume: all dimensions must be >= 1");
    }
    data.assign(static_cast<size_t>(batch) * channels * height * width, 0.0);
}

void FeatureVolume::check_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("FeatureVolume: non-finite entry");
        }
    }
}

void PointBatch::validate() const {
    if (points.size() != batch_index.size() || points.size() != cell_index.size()) {
        throw std::invalid_argument("PointBatch: parallel arrays must have equal length");
    }
}

uint64_t VisibilityTable::total_entries() const {
    uint64_t n = 0;
    for (const auto& cam : per_camera) n += cam.size();
    return n;
}

namespace {

struct Corners {
    int x0, x1, y0, y1;
    double w00, w01, w10, w11;  // (y,x) order: w[y][x]
};

// Corner indices and weights for (u,v). Out-of-range corners get weight
// zero and a clamped index so reads stay in bounds at the grid edge.
inline Corners corner_weights(double u, double v, int width, int height) {
    Corners c;
    const double fx0 = std::floor(u);
    const double fy0 = std::floor(v);
    c.x0 = static_cast<int>(fx0);
    c.y0 = static_cast<int>(fy0);
    const double ax = u - fx0;
    const double ay = v - fy0;
    c.x1 = std::min(c.x0 + 1, width - 1);
    c.y1 = std::min(c.y0 + 1, height - 1);
    c.x0 = std::min(c.x0, width - 1);
    c.y0 = std::min(c.y0, height - 1);
    c.w00 = (1.0 - ay) * (1.0 - ax);
    c.w01 = (1.0 - ay) * ax;
    c.w10 = ay * (1.0 - ax);
    c.w11 = ay * ax;
    return c;
}

} // namespace

void bilinear_sample(const FeatureVolume& vol, int b, double u, double v, double* out) {
    if (!(u >= 0.0 && u <= vol.width - 1 && v >= 0.0 && v <= vol.height - 1)) {
        throw std::invalid_argument("bilinear_sample: coordinates outside [0,W-1]x[0,H-1]");
    }
    if (b < 0 || b >= vol.batch) {
        throw std::invalid_argument("bilinear_sample: batch index out of range");
    }
    const Corners c = corner_weights(u, v, vol.width, vol.height);
    const size_t plane = static_cast<size_t>(vol.height) * vol.width;
    const double* base = vol.data.data() + static_cast<size_t>(b) * vol.channels * plane;
    for (int ch = 0; ch < vol.channels; ++ch) {
        const double* p = base + ch * plane;
        out[ch] = c.w00 * p[c.y0 * vol.width + c.x0] + c.w01 * p[c.y0 * vol.width + c.x1] +
                  c.w10 * p[c.y1 * vol.width + c.x0] + c.w11 * p[c.y1 * vol.width + c.x1];
    }
}

std::vector<double> bilinear_sample(const FeatureVolume& vol, double u, double v) {
    std::vector<double> out(vol.channels, 0.0);
    bilinear_sample(vol, 0, u, v, out.data());
    return out;
}

VisibilityTable build_visibility_table(const CameraRig& rig, const PointBatch& batch) {
    batch.validate();
    VisibilityTable table;
    table.per_camera.resize(rig.n_cam());
    table.seen_count.assign(batch.size(), 0);
    table.batch_index = batch.batch_index;
    for (int cam = 0; cam < rig.n_cam(); ++cam) {
        auto& entries = table.per_camera[cam];
        const CameraModel& model = rig.camera(cam);
        for (uint32_t slot = 0; slot < batch.size(); ++slot) {
            const Projection proj = project_point(model, batch.points[slot]);
            if (proj.visible) {
                entries.push_back({slot, proj.u, proj.v});
                ++table.seen_count[slot];
            }
        }
    }
    return table;
}

namespace {

void check_volumes(std::span<const FeatureVolume> vols, const VisibilityTable& table) {
    if (vols.size() != table.per_camera.size()) {
        throw std::invalid_argument("sparse_pull: volume count does not match table cameras");
    }
    for (size_t i = 1; i < vols.size(); ++i) {
        if (vols[i].channels != vols[0].channels) {
            throw std::invalid_argument("sparse_pull: volumes disagree on channel count");
        }
    }
}

} // namespace

PulledFeatures sparse_pull(std::span<const FeatureVolume> vols, const VisibilityTable& table) {
    check_volumes(vols, table);
    const size_t n = table.n_points();
    const int C = vols.empty() ? 0 : vols[0].channels;

    PulledFeatures out;
    out.channels = C;
    out.data.assign(n * C, 0.0);
    out.mask.assign(n, 0);

    std::vector<double> sample(C);
    for (size_t cam = 0; cam < vols.size(); ++cam) {
        const FeatureVolume& vol = vols[cam];
        for (const auto& e : table.per_camera[cam]) {
            const int b = table.batch_index[e.slot];
            if (b < 0 || b >= vol.batch) {
                throw std::invalid_argument("sparse_pull: point batch index exceeds volume batch");
            }
            bilinear_sample(vol, b, e.u, e.v, sample.data());
            double* dst = out.data.data() + static_cast<size_t>(e.slot) * C;
            for (int c = 0; c < C; ++c) dst[c] += sample[c];
            ++out.interp_ops;
        }
    }
    for (size_t i = 0; i < n; ++i) {
        const int32_t seen = table.seen_count[i];
        if (seen > 0) {
            out.mask[i] = 1;
            const double inv = 1.0 / seen;
            double* dst = out.data.data() + i * C;
            for (int c = 0; c < C; ++c) dst[c] *= inv;
        }
    }
    return out;
}

PulledFeatures naive_pull_oracle(std::span<const FeatureVolume> vols, const CameraRig& rig,
                                 const PointBatch& batch) {
    batch.validate();
    if (static_cast<int>(vols.size()) != rig.n_cam()) {
        throw std::invalid_argument("naive_pull_oracle: need one volume per camera");
    }
    const size_t n = batch.size();
    const int C = vols.empty() ? 0 : vols[0].channels;

    PulledFeatures out;
    out.channels = C;
    out.data.assign(n * C, 0.0);
    out.mask.assign(n, 0);

    for (size_t i = 0; i < n; ++i) {
        int seen = 0;
        double* dst = out.data.data() + i * C;
        for (int cam = 0; cam < rig.n_cam(); ++cam) {
            const FeatureVolume& vol = vols[cam];
            const Projection proj = project_point(rig.camera(cam), batch.points[i]);
            // Clamped interpolation runs for every pair; the mask kills
            // the invisible contributions afterwards.
            const double cu = std::clamp(proj.u, 0.0, static_cast<double>(vol.width - 1));
            const double cv = std::clamp(proj.v, 0.0, static_cast<double>(vol.height - 1));
            const int x0 = std::min(static_cast<int>(std::floor(cu)), vol.width - 1);
            const int y0 = std::min(static_cast<int>(std::floor(cv)), vol.height - 1);
            const int x1 = std::min(x0 + 1, vol.width - 1);
            const int y1 = std::min(y0 + 1, vol.height - 1);
            const double ax = cu - std::floor(cu);
            const double ay = cv - std::floor(cv);
            const int b = batch.batch_index[i];
            const double m = proj.visible ? 1.0 : 0.0;
            for (int c = 0; c < C; ++c) {
                const double v00 = vol.at(b, c, y0, x0);
                const double v01 = vol.at(b, c, y0, x1);
                const double v10 = vol.at(b, c, y1, x0);
                const double v11 = vol.at(b, c, y1, x1);
                const double top = v00 + ax * (v01 - v00);
                const double bot = v10 + ax * (v11 - v10);
                dst[c] += m * (top + ay * (bot - top));
            }
            ++out.interp_ops;
            if (proj.visible) ++seen;
        }
        if (seen > 0) {
            out.mask[i] = 1;
            const double inv = 1.0 / seen;
            for (int c = 0; c < C; ++c) dst[c] *= inv;
        } else {
            for (int c = 0; c < C; ++c) dst[c] = 0.0;
        }
    }
    return out;
}

std::vector<FeatureVolume> sparse_pull_backward(std::span<const FeatureVolume> vols,
                                                const VisibilityTable& table,
                                                std::span<const double> grad_out) {
    check_volumes(vols, table);
    const int C = vols.empty() ? 0 : vols[0].channels;
    if (grad_out.size() != table.n_points() * static_cast<size_t>(C)) {
        throw std::invalid_argument("sparse_pull_backward: grad_out length mismatch");
    }

    std::vector<FeatureVolume> grads;
    grads.reserve(vols.size());
    for (const auto& vol : vols) {
        grads.emplace_back(vol.camera_id, vol.channels, vol.height, vol.width, vol.batch);
    }

    for (size_t cam = 0; cam < vols.size(); ++cam) {
        FeatureVolume& g = grads[cam];
        for (const auto& e : table.per_camera[cam]) {
            const Corners c = corner_weights(e.u, e.v, g.width, g.height);
            const double scale = 1.0 / table.seen_count[e.slot];
            const int b = table.batch_index[e.slot];
            const double* go = grad_out.data() + static_cast<size_t>(e.slot) * C;
            for (int ch = 0; ch < C; ++ch) {
                const double v = scale * go[ch];
                g.at(b, ch, c.y0, c.x0) += c.w00 * v;
                g.at(b, ch, c.y0, c.x1) += c.w01 * v;
                g.at(b, ch, c.y1, c.x0) += c.w10 * v;
                g.at(b, ch, c.y1, c.x1) += c.w11 * v;
            }
        }
    }
    return grads;
}

uint64_t sparse_pull_workspace_bytes(const VisibilityTable& table, int channels) {
    // table entries + gathered samples + averaged output
    const uint64_t entries = table.total_entries();
    const uint64_t n = table.n_points();
    return entries * (sizeof(VisibilityTable::Entry) + channels * sizeof(double)) +
           n * (channels * sizeof(double) + sizeof(int32_t) + 1);
}

uint64_t naive_pull_workspace_bytes(size_t n_points, int n_cam, int channels) {
    // padded gather of every (point, camera) pair + mask + averaged output
    const uint64_t pairs = static_cast<uint64_t>(n_points) * n_cam;
    return pairs * (channels * sizeof(double) + 2 * sizeof(double) + 1) +
           static_cast<uint64_t>(n_points) * channels * sizeof(double);
}

} // namespace pbev
