#include "pbev/verification.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pbev/bev_net.hpp"
#include "pbev/gradcheck.hpp"
#include "pbev/rng.hpp"
#include "pbev/sparse_pulling.hpp"
#include "pbev/window_attention.hpp"

namespace pbev {

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat3 random_rotation(Rng& rng) {
    const double yaw = 2.0 * kPi * rng.next_real();
    const double pitch = 0.6 * (rng.next_real() - 0.5);
    const double roll = 0.6 * (rng.next_real() - 0.5);
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    const double cr = std::cos(roll), sr = std::sin(roll);
    Mat3 rz = Mat3::identity();
    rz(0, 0) = cy; rz(0, 1) = -sy; rz(1, 0) = sy; rz(1, 1) = cy;
    Mat3 ry = Mat3::identity();
    ry(0, 0) = cp; ry(0, 2) = sp; ry(2, 0) = -sp; ry(2, 2) = cp;
    Mat3 rx = Mat3::identity();
    rx(1, 1) = cr; rx(1, 2) = -sr; rx(2, 1) = sr; rx(2, 2) = cr;
    return rz * ry * rx;
}

CameraRig random_rig(Rng& rng, int n_cam) {
    std::vector<CameraModel> cams;
    for (int i = 0; i < n_cam; ++i) {
        const int w = 5 + static_cast<int>(rng.next_below(8));
        const int h = 4 + static_cast<int>(rng.next_below(8));
        Mat3 K = Mat3::identity();
        K(0, 0) = 2.0 + 6.0 * rng.next_real();
        K(1, 1) = 2.0 + 6.0 * rng.next_real();
        K(0, 2) = 0.5 * (w - 1);
        K(1, 2) = 0.5 * (h - 1);
        const Mat3 R = random_rotation(rng);
        const Vec3 t{2.0 * (rng.next_real() - 0.5), 2.0 * (rng.next_real() - 0.5),
                     2.0 * (rng.next_real() - 0.5)};
        cams.emplace_back(i, K, R, t, w, h);
    }
    return CameraRig(std::move(cams));
}

std::vector<FeatureVolume> random_volumes_for(const CameraRig& rig, int channels, int batch,
                                              Rng& rng) {
    std::vector<FeatureVolume> vols;
    for (const auto& cam : rig.cameras()) {
        FeatureVolume vol(cam.camera_id(), channels, cam.feat_height(), cam.feat_width(), batch);
        for (double& v : vol.data) v = rng.next_normal();
        vols.push_back(std::move(vol));
    }
    return vols;
}

PointBatch random_points(Rng& rng, size_t n, int batch) {
    PointBatch out;
    for (size_t i = 0; i < n; ++i) {
        const Vec3 p{20.0 * (rng.next_real() - 0.5), 20.0 * (rng.next_real() - 0.5),
                     6.0 * (rng.next_real() - 0.5)};
        out.push(p, batch > 1 ? static_cast<int32_t>(rng.next_below(batch)) : 0, {0, 0, 0});
    }
    return out;
}

double rel_gap(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

std::string describe(double worst, const std::string& extra = "") {
    std::ostringstream out;
    out << "worst rel err " << worst;
    if (!extra.empty()) out << ", " << extra;
    return out.str();
}

} // namespace

SuiteResult verify_pulling_oracle(int instances, uint64_t seed) {
    SuiteResult res{"pulling-oracle", true, 0.0, ""};
    for (int inst = 0; inst < instances; ++inst) {
        Rng rng(hash_mix(seed, inst));
        const int n_cam = 2 + static_cast<int>(rng.next_below(3));
        const int channels = 1 + static_cast<int>(rng.next_below(5));
        const int batch = 1 + static_cast<int>(rng.next_below(2));
        const CameraRig rig = random_rig(rng, n_cam);
        const auto vols = random_volumes_for(rig, channels, batch, rng);
        const PointBatch points = random_points(rng, 10 + rng.next_below(120), batch);

        const VisibilityTable table = build_visibility_table(rig, points);
        const PulledFeatures sparse = sparse_pull(vols, table);
        const PulledFeatures naive = naive_pull_oracle(vols, rig, points);

        if (sparse.interp_ops != table.total_entries() ||
            naive.interp_ops != points.size() * static_cast<uint64_t>(n_cam)) {
            res.pass = false;
            res.detail = "interp-op accounting mismatch";
            return res;
        }
        for (size_t i = 0; i < sparse.data.size(); ++i) {
            res.worst = std::max(res.worst, rel_gap(sparse.data[i], naive.data[i]));
        }
        for (size_t i = 0; i < sparse.mask.size(); ++i) {
            if (sparse.mask[i] != naive.mask[i]) {
                res.pass = false;
                res.detail = "mask mismatch";
                return res;
            }
        }
    }
    res.pass = res.worst < 1e-12;
    res.detail = describe(res.worst, std::to_string(instances) + " instances");
    return res;
}

SuiteResult verify_attention_oracle(int instances, uint64_t seed) {
    SuiteResult res{"attention-oracle", true, 0.0, ""};
    for (int inst = 0; inst < instances; ++inst) {
        Rng rng(hash_mix(seed, inst));
        const int dim = 2 + static_cast<int>(rng.next_below(7));
        const size_t n = 5 + rng.next_below(36);
        SparseTemporalSet set;
        set.dim = dim;
        for (size_t i = 0; i < n; ++i) {
            // unique coordinates by construction
            const int t = (i == 0) ? 0 : static_cast<int>(rng.next_below(4));
            set.entries.push_back({t, static_cast<int>(i % 16), static_cast<int>(i / 16) * 3 + t});
            for (int d = 0; d < dim; ++d) set.features.push_back(rng.next_normal());
        }
        set.validate();
        const AttentionParams params = AttentionParams::random(dim, hash_mix(seed, inst, 5));

        const AttentionForward fwd = submanifold_attention(set, WindowSpec::inf(), params);
        const std::vector<double> oracle = dense_attention_oracle(set, params);
        if (oracle.size() != fwd.output.size()) {
            res.pass = false;
            res.detail = "query count mismatch";
            return res;
        }
        for (size_t i = 0; i < oracle.size(); ++i) {
            res.worst = std::max(res.worst, rel_gap(fwd.output[i], oracle[i]));
        }
    }
    res.pass = res.worst < 1e-12;
    res.detail = describe(res.worst, std::to_string(instances) + " instances");
    return res;
}

SuiteResult verify_pulling_gradient(uint64_t seed) {
    Rng rng(seed);
    // the spec's instance: C=3, 5x5 volumes, 20 points
    std::vector<CameraModel> cams;
    for (int i = 0; i < 2; ++i) {
        Mat3 K = Mat3::identity();
        K(0, 0) = 2.5;
        K(1, 1) = 2.5;
        K(0, 2) = 2.0;
        K(1, 2) = 2.0;
        cams.emplace_back(i, K, random_rotation(rng), Vec3{0.2, -0.1, 0.3}, 5, 5);
    }
    const CameraRig rig{std::move(cams)};
    auto vols = random_volumes_for(rig, 3, 1, rng);
    const PointBatch points = random_points(rng, 20, 1);
    const VisibilityTable table = build_visibility_table(rig, points);

    std::vector<double> grad_out(points.size() * 3);
    for (double& g : grad_out) g = rng.next_normal();

    const auto analytic = sparse_pull_backward(vols, table, grad_out);

    auto loss = [&]() {
        const PulledFeatures out = sparse_pull(vols, table);
        double acc = 0.0;
        for (size_t i = 0; i < out.data.size(); ++i) acc += grad_out[i] * out.data[i];
        return acc;
    };
    std::vector<std::pair<std::string, std::span<double>>> tensors;
    std::vector<std::span<const double>> grads;
    for (size_t cam = 0; cam < vols.size(); ++cam) {
        tensors.emplace_back("vol" + std::to_string(cam), std::span<double>(vols[cam].data));
        grads.emplace_back(analytic[cam].data);
    }
    const GradCheckReport report = check_gradients(loss, tensors, grads, 1e-5);
    return {"pulling-gradient", report.max_rel_err < 1e-6, report.max_rel_err,
            describe(report.max_rel_err, std::to_string(report.checked) + " entries")};
}

SuiteResult verify_attention_gradient(uint64_t seed) {
    Rng rng(seed);
    const int dim = 4;
    SparseTemporalSet set;
    set.dim = dim;
    for (int i = 0; i < 12; ++i) {
        const int t = i < 5 ? 0 : static_cast<int>(rng.next_below(3));
        set.entries.push_back({t, i % 4 + static_cast<int>(rng.next_below(3)), i / 4 + t});
        for (int d = 0; d < dim; ++d) set.features.push_back(rng.next_normal());
    }
    // de-duplicate by nudging collisions
    for (size_t i = 0; i < set.entries.size(); ++i) {
        for (size_t j = 0; j < i; ++j) {
            auto& a = set.entries[i];
            const auto& b = set.entries[j];
            if (a.t == b.t && a.ix == b.ix && a.iy == b.iy) a.ix += 7 + static_cast<int>(i);
        }
    }
    set.validate();
    AttentionParams params = AttentionParams::random(dim, hash_mix(seed, 3));
    const WindowSpec window{1, 2, 2, false};

    std::vector<double> grad_out;
    {
        const AttentionForward probe = submanifold_attention(set, window, params);
        grad_out.resize(probe.output.size());
        for (double& g : grad_out) g = rng.next_normal();
    }

    const AttentionForward fwd = submanifold_attention(set, window, params);
    const AttentionGrads analytic = submanifold_attention_backward(set, params, fwd, grad_out);

    auto loss = [&]() {
        const AttentionForward f = submanifold_attention(set, window, params);
        double acc = 0.0;
        for (size_t i = 0; i < f.output.size(); ++i) acc += grad_out[i] * f.output[i];
        return acc;
    };
    std::vector<std::pair<std::string, std::span<double>>> tensors{
        {"features", std::span<double>(set.features)},
        {"wq", std::span<double>(params.wq)},
        {"wk", std::span<double>(params.wk)},
        {"wv", std::span<double>(params.wv)}};
    std::vector<std::span<const double>> grads{analytic.d_features, analytic.d_wq, analytic.d_wk,
                                               analytic.d_wv};
    const GradCheckReport report = check_gradients(loss, tensors, grads, 1e-5);
    return {"attention-gradient", report.max_rel_err < 1e-6, report.max_rel_err,
            describe(report.max_rel_err, std::to_string(report.checked) + " entries")};
}

SuiteResult verify_bce_gradient(uint64_t seed) {
    Rng rng(seed);
    PassResult pass;
    std::vector<uint8_t> labels;
    for (int i = 0; i < 16; ++i) {
        pass.cells.cells.push_back({i, 0});
        pass.logits.push_back(2.0 * rng.next_normal());
        labels.push_back(rng.next_real() < 0.5 ? 0 : 1);
    }
    const BceResult analytic = bce_on_points(pass, labels);
    auto loss = [&]() { return bce_on_points(pass, labels).loss; };
    std::vector<std::pair<std::string, std::span<double>>> tensors{
        {"logits", std::span<double>(pass.logits)}};
    std::vector<std::span<const double>> grads{analytic.dlogits};
    const GradCheckReport report = check_gradients(loss, tensors, grads, 1e-5);
    return {"bce-gradient", report.max_rel_err < 1e-6, report.max_rel_err,
            describe(report.max_rel_err, "16 logits")};
}

SuiteResult verify_end_to_end_gradient(uint64_t seed) {
    Rng rng(seed);
    // 3-cell pipeline on a small world
    const BevGrid grid(8.0, 8.0, 1.0);
    const PillarSpec pillar(-0.5, 1.5, 2);
    const CameraRig rig = CameraRig::synthetic(10, 8, 80.0, 1.2);
    auto vols = random_volumes_for(rig, 2, 1, rng);
    HeadParams params = HeadParams::random(pillar.n_z * 2, 4, hash_mix(seed, 9));

    SampleSet cells;
    cells.cells = {{4, 4}, {5, 3}, {2, 5}};
    const std::vector<uint8_t> labels{1, 0, 1};

    const LossAndGrads analytic =
        loss_and_grads(vols, rig, grid, pillar, cells, labels, params);

    auto loss = [&]() {
        return loss_and_grads(vols, rig, grid, pillar, cells, labels, params).loss;
    };
    std::vector<std::pair<std::string, std::span<double>>> tensors{
        {"w_flat", std::span<double>(params.w_flat)},
        {"w_hidden", std::span<double>(params.w_hidden)},
        {"b_hidden", std::span<double>(params.b_hidden)},
        {"w_out", std::span<double>(params.w_out)},
        {"b_out", std::span<double>(params.b_out)}};
    std::vector<std::span<const double>> grads{analytic.head.w_flat, analytic.head.w_hidden,
                                               analytic.head.b_hidden, analytic.head.w_out,
                                               analytic.head.b_out};
    for (size_t cam = 0; cam < vols.size(); ++cam) {
        tensors.emplace_back("vol" + std::to_string(cam), std::span<double>(vols[cam].data));
        grads.emplace_back(analytic.vol_grads[cam].data);
    }
    const GradCheckReport report = check_gradients(loss, tensors, grads, 1e-5);
    return {"end2end-gradient", report.max_rel_err < 1e-5, report.max_rel_err,
            describe(report.max_rel_err, std::to_string(report.checked) + " entries")};
}

std::vector<SuiteResult> run_all_suites() {
    return {verify_pulling_oracle(),  verify_attention_oracle(), verify_pulling_gradient(),
            verify_attention_gradient(), verify_bce_gradient(),  verify_end_to_end_gradient()};
}

} // namespace pbev
