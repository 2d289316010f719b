#include "pbev/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pbev {

namespace {
constexpr double kOrthoTol = 1e-9;
constexpr double kPi = 3.14159265358979323846;
} // namespace

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Mat3 Mat3::identity() {
    Mat3 r;
    r.m[0] = r.m[4] = r.m[8] = 1.0;
    return r;
}

Mat3 Mat3::yaw(double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    Mat3 r = identity();
    r.m[0] = c; r.m[1] = -s;
    r.m[3] = s; r.m[4] = c;
    return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
            r.m[i * 3 + j] = acc;
        }
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[j * 3 + i] = m[i * 3 + j];
    return r;
}

double Mat3::orthonormality_error() const {
    const Mat3 g = transposed() * (*this);
    double err = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double target = (i == j) ? 1.0 : 0.0;
            err = std::max(err, std::abs(g.m[i * 3 + j] - target));
        }
    return err;
}

BevGrid::BevGrid(double x_extent, double y_extent, double resolution)
    : x_extent_(x_extent), y_extent_(y_extent), resolution_(resolution) {
    if (!(x_extent > 0.0) || !(y_extent > 0.0) || !(resolution > 0.0)) {
        throw std::invalid_argument("BevGrid: extents and resolution must be positive");
    }
    nx_ = static_cast<int>(std::lround(x_extent / resolution));
    ny_ = static_cast<int>(std::lround(y_extent / resolution));
    if (nx_ < 1 || ny_ < 1) {
        throw std::invalid_argument("BevGrid: degenerate cell counts");
    }
}

std::pair<double, double> BevGrid::cell_to_world(int ix, int iy) const {
    if (!contains(ix, iy)) {
        throw std::out_of_range("cell_to_world: cell (" + std::to_string(ix) + "," +
                                std::to_string(iy) + ") outside grid");
    }
    return {(ix + 0.5) * resolution_ - 0.5 * x_extent_,
            (iy + 0.5) * resolution_ - 0.5 * y_extent_};
}

std::optional<Cell> BevGrid::world_to_cell(double x, double y) const {
    const int ix = static_cast<int>(std::floor((x + 0.5 * x_extent_) / resolution_));
    const int iy = static_cast<int>(std::floor((y + 0.5 * y_extent_) / resolution_));
    if (!contains(ix, iy)) return std::nullopt;
    return Cell{ix, iy};
}

PillarSpec::PillarSpec(double z_min_, double z_max_, int n_z_)
    : z_min(z_min_), z_max(z_max_), n_z(n_z_) {
    if (!(z_min < z_max)) throw std::invalid_argument("PillarSpec: requires z_min < z_max");
    if (n_z < 1) throw std::invalid_argument("PillarSpec: requires n_z >= 1");
}

std::vector<double> PillarSpec::z_samples() const {
    std::vector<double> zs;
    zs.reserve(n_z);
    if (n_z == 1) {
        zs.push_back(0.5 * (z_min + z_max));
    } else {
        const double step = (z_max - z_min) / (n_z - 1);
        for (int j = 0; j < n_z; ++j) zs.push_back(z_min + j * step);
    }
    return zs;
}

CameraModel::CameraModel(int camera_id, const Mat3& intrinsics, const Mat3& rotation,
                         const Vec3& translation, int feat_width, int feat_height)
    : camera_id_(camera_id),
      intrinsics_(intrinsics),
      rotation_(rotation),
      translation_(translation),
      feat_width_(feat_width),
      feat_height_(feat_height) {
    if (feat_width < 1 || feat_height < 1) {
        throw std::invalid_argument("CameraModel: feature map must be at least 1x1");
    }
    const auto& K = intrinsics_.m;
    if (K[3] != 0.0 || K[6] != 0.0 || K[7] != 0.0) {
        throw std::invalid_argument("CameraModel: intrinsics must be upper-triangular");
    }
    if (!(K[0] > 0.0) || !(K[4] > 0.0) || !(K[8] > 0.0)) {
        throw std::invalid_argument("CameraModel: focal entries must be positive");
    }
    if (rotation_.orthonormality_error() >= kOrthoTol) {
        throw std::invalid_argument("CameraModel: rotation is not orthonormal");
    }
}

Vec3 CameraModel::center() const {
    const Vec3 neg = rotation_.transposed() * translation_;
    return {-neg.x, -neg.y, -neg.z};
}

CameraRig::CameraRig(std::vector<CameraModel> cameras) : cameras_(std::move(cameras)) {
    for (size_t i = 0; i < cameras_.size(); ++i) {
        if (cameras_[i].camera_id() != static_cast<int>(i)) {
            throw std::invalid_argument("CameraRig: camera ids must be dense 0..n-1");
        }
    }
}

CameraRig CameraRig::synthetic(int feat_width, int feat_height, double h_fov_deg,
                               double height) {
    const double cx = 0.5 * (feat_width - 1);
    const double cy = 0.5 * (feat_height - 1);
    const double f = cx / std::tan(0.5 * h_fov_deg * kPi / 180.0);
    Mat3 K = Mat3::identity();
    K(0, 0) = f;
    K(1, 1) = f;
    K(0, 2) = cx;
    K(1, 2) = cy;

    const double yaws_deg[6] = {0.0, 60.0, -60.0, 120.0, -120.0, 180.0};
    std::vector<CameraModel> cams;
    cams.reserve(6);
    for (int i = 0; i < 6; ++i) {
        const double psi = yaws_deg[i] * kPi / 180.0;
        const double c = std::cos(psi), s = std::sin(psi);
        // Rows are the camera axes (right, down, forward) in world coords.
        Mat3 R;
        R(0, 0) = s;   R(0, 1) = -c;  R(0, 2) = 0.0;
        R(1, 0) = 0.0; R(1, 1) = 0.0; R(1, 2) = -1.0;
        R(2, 0) = c;   R(2, 1) = s;   R(2, 2) = 0.0;
        const Vec3 center{0.0, 0.0, height};
        const Vec3 rc = R * center;
        cams.emplace_back(i, K, R, Vec3{-rc.x, -rc.y, -rc.z}, feat_width, feat_height);
    }
    return CameraRig(std::move(cams));
}

std::vector<Vec3> build_pillar(const BevGrid& grid, const PillarSpec& spec, int ix, int iy) {
    const auto [x, y] = grid.cell_to_world(ix, iy);
    std::vector<Vec3> pts;
    pts.reserve(spec.n_z);
    for (double z : spec.z_samples()) pts.push_back({x, y, z});
    return pts;
}

Projection project_point(const CameraModel& cam, const Vec3& p) {
    const Vec3 pc = cam.rotation() * p + cam.translation();
    Projection out;
    out.depth = pc.z;
    if (!(pc.z > 0.0)) return out;
    const Vec3 q = cam.intrinsics() * pc;
    out.u = q.x / q.z;
    out.v = q.y / q.z;
    out.visible = out.u >= 0.0 && out.u <= cam.feat_width() - 1 &&
                  out.v >= 0.0 && out.v <= cam.feat_height() - 1;
    return out;
}

std::vector<int> visible_cameras(const CameraRig& rig, const Vec3& p) {
    std::vector<int> ids;
    for (const auto& cam : rig.cameras()) {
        if (project_point(cam, p).visible) ids.push_back(cam.camera_id());
    }
    return ids;
}

namespace {

void check_planar_rigid(const Mat3& aug) {
    const auto& a = aug.m;
    if (std::abs(a[6]) > kOrthoTol || std::abs(a[7]) > kOrthoTol ||
        std::abs(a[8] - 1.0) > kOrthoTol) {
        throw std::invalid_argument("bev augmentation: last row must be (0,0,1)");
    }
    const double r00 = a[0], r01 = a[1], r10 = a[3], r11 = a[4];
    const double g00 = r00 * r00 + r10 * r10;
    const double g11 = r01 * r01 + r11 * r11;
    const double g01 = r00 * r01 + r10 * r11;
    const double det = r00 * r11 - r01 * r10;
    if (std::abs(g00 - 1.0) > kOrthoTol || std::abs(g11 - 1.0) > kOrthoTol ||
        std::abs(g01) > kOrthoTol || std::abs(det - 1.0) > 1e-6) {
        throw std::invalid_argument("bev augmentation: matrix is not a planar rigid motion");
    }
}

} // namespace

std::vector<Vec3> apply_bev_augmentation(const Mat3& aug, const std::vector<Vec3>& points) {
    check_planar_rigid(aug);
    const auto& a = aug.m;
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        out.push_back({a[0] * p.x + a[1] * p.y + a[2],
                       a[3] * p.x + a[4] * p.y + a[5],
                       p.z});
    }
    return out;
}

std::vector<std::pair<double, double>> apply_bev_augmentation(
    const Mat3& aug, const std::vector<std::pair<double, double>>& points) {
    check_planar_rigid(aug);
    const auto& a = aug.m;
    std::vector<std::pair<double, double>> out;
    out.reserve(points.size());
    for (const auto& [x, y] : points) {
        out.emplace_back(a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5]);
    }
    return out;
}

Mat3 planar_transform(double yaw_radians, double tx, double ty) {
    Mat3 t = Mat3::yaw(yaw_radians);
    t(0, 2) = tx;
    t(1, 2) = ty;
    return t;
}

} // namespace pbev
