#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace pbev {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const;
};

// Row-major 3x3.
struct Mat3 {
    double m[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};

    static Mat3 identity();
    static Mat3 yaw(double radians);  // rotation about +z in the xy-plane

    double operator()(int r, int c) const { return m[r * 3 + c]; }
    double& operator()(int r, int c) { return m[r * 3 + c]; }

    Vec3 operator*(const Vec3& v) const;
    Mat3 operator*(const Mat3& o) const;
    Mat3 transposed() const;

    // max |(A^T A - I)_ij|
    double orthonormality_error() const;
};

struct Cell {
    int ix = 0, iy = 0;
    bool operator==(const Cell& o) const { return ix == o.ix && iy == o.iy; }
    bool operator<(const Cell& o) const { return ix != o.ix ? ix < o.ix : iy < o.iy; }
};

/// The 2D BeV lattice. Ego origin at the grid center; cell (ix,iy) covers
/// [ix*res - x_extent/2, (ix+1)*res - x_extent/2) along x, same along y.
class BevGrid {
public:
    BevGrid(double x_extent, double y_extent, double resolution);

    static BevGrid standard() { return BevGrid(100.0, 100.0, 0.5); }

    double x_extent() const { return x_extent_; }
    double y_extent() const { return y_extent_; }
    double resolution() const { return resolution_; }
    int nx() const { return nx_; }
    int ny() const { return ny_; }
    size_t n_cells() const { return static_cast<size_t>(nx_) * ny_; }

    bool contains(int ix, int iy) const {
        return ix >= 0 && ix < nx_ && iy >= 0 && iy < ny_;
    }

    // Cell center in ego coordinates. Throws std::out_of_range.
    std::pair<double, double> cell_to_world(int ix, int iy) const;

    // Inverse of cell_to_world; nullopt if (x,y) lies outside the grid.
    std::optional<Cell> world_to_cell(double x, double y) const;

    size_t flat_index(int ix, int iy) const {
        return static_cast<size_t>(iy) * nx_ + ix;
    }

private:
    double x_extent_, y_extent_, resolution_;
    int nx_, ny_;
};

/// Vertical discretization of a BeV cell into pillar sample heights.
struct PillarSpec {
    double z_min;
    double z_max;
    int n_z;

    PillarSpec(double z_min_, double z_max_, int n_z_);

    static PillarSpec standard() { return PillarSpec(-1.0, 3.0, 8); }

    // n_z evenly spaced heights; single sample sits at the mid-height.
    std::vector<double> z_samples() const;
};

/// Pinhole camera. K is expressed in feature-map pixel units with pixel
/// centers at integer coordinates; rotation maps world (ego) coordinates
/// to camera coordinates (+z forward, +x right, +y down).
class CameraModel {
public:
    CameraModel(int camera_id, const Mat3& intrinsics, const Mat3& rotation,
                const Vec3& translation, int feat_width, int feat_height);

    int camera_id() const { return camera_id_; }
    const Mat3& intrinsics() const { return intrinsics_; }
    const Mat3& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    int feat_width() const { return feat_width_; }
    int feat_height() const { return feat_height_; }

    // Camera center in world coordinates (-R^T t).
    Vec3 center() const;

private:
    int camera_id_;
    Mat3 intrinsics_;
    Mat3 rotation_;
    Vec3 translation_;
    int feat_width_;
    int feat_height_;
};

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    bool visible = false;
};

class CameraRig {
public:
    explicit CameraRig(std::vector<CameraModel> cameras);

    // Six cameras on the ego at the given height, yaws spaced 60 degrees
    // apart, sharing one horizontal field of view.
    static CameraRig synthetic(int feat_width = 60, int feat_height = 28,
                               double h_fov_deg = 70.0, double height = 1.5);

    const std::vector<CameraModel>& cameras() const { return cameras_; }
    const CameraModel& camera(int id) const { return cameras_[id]; }
    int n_cam() const { return static_cast<int>(cameras_.size()); }

private:
    std::vector<CameraModel> cameras_;
};

// Cell center lifted to the pillar heights of `spec`.
std::vector<Vec3> build_pillar(const BevGrid& grid, const PillarSpec& spec, int ix, int iy);

// Perspective projection into feature-pixel coordinates. Points at or
// behind the camera plane, or landing outside [0,W-1]x[0,H-1], come back
// with visible=false; that is a result, not an error.
Projection project_point(const CameraModel& cam, const Vec3& p);

// Indices of the cameras whose frustum contains p, ascending.
std::vector<int> visible_cameras(const CameraRig& rig, const Vec3& p);

// Planar rigid transform (rotation+translation homogeneous 3x3) applied in
// the BeV plane; z passes through. Throws std::invalid_argument when the
// matrix is not a planar rigid motion.
std::vector<Vec3> apply_bev_augmentation(const Mat3& aug, const std::vector<Vec3>& points);
std::vector<std::pair<double, double>> apply_bev_augmentation(
    const Mat3& aug, const std::vector<std::pair<double, double>>& points);

// Convenience builder for the augmentation matrix.
Mat3 planar_transform(double yaw_radians, double tx, double ty);

} // namespace pbev
