#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace npbg {

/// Nearest-integer with deterministic tie behavior: round(0.5) = 1.
inline int64_t round_half_up(double a) { return static_cast<int64_t>(std::floor(a + 0.5)); }

/// Points behind or closer than this camera-space depth are invisible.
inline constexpr double kZNear = 1e-4;

struct PointCloud {
    std::vector<Eigen::Vector3d> positions;
    std::optional<std::vector<Eigen::Vector3d>> colors;  // RGB in [0,1]

    int64_t size() const { return static_cast<int64_t>(positions.size()); }
    void validate() const;
};

struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    void validate() const;
    RigidTransform inverse() const;
    RigidTransform compose(const RigidTransform& then) const;  // this applied first
    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
};

/// Pinhole camera. World-to-camera: p_cam = R * p_world + t; image x right,
/// y down, z forward. Integer pixel (ix,iy) covers [ix-0.5, ix+0.5).
struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    int64_t width = 0, height = 0;

    void validate() const;
    Eigen::Vector3d viewpoint() const { return -R.transpose() * t; }

    /// Continuous projection (no rounding). Returns false when the point is
    /// at or behind the near plane. Spelled out scalar-wise: the evaluation
    /// order is part of the projection convention (results are compared
    /// bitwise against scalar reimplementations).
    bool project_continuous(const Eigen::Vector3d& p, double& u, double& v, double& depth) const {
        const double px = R(0, 0) * p.x() + R(0, 1) * p.y() + R(0, 2) * p.z() + t.x();
        const double py = R(1, 0) * p.x() + R(1, 1) * p.y() + R(1, 2) * p.z() + t.y();
        const double pz = R(2, 0) * p.x() + R(2, 1) * p.y() + R(2, 2) * p.z() + t.z();
        depth = pz;
        if (depth <= kZNear) return false;
        u = fx * px / depth + cx;
        v = fy * py / depth + cy;
        return true;
    }
};

struct ProjectedPoint {
    int64_t ix = 0, iy = 0;
    double depth = 0.0;
    bool visible = false;
};

ProjectedPoint project_point(const Eigen::Vector3d& p, const Camera& cam);
std::vector<ProjectedPoint> project(const PointCloud& cloud, const Camera& cam);

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& transform);

/// Buckets points by floor(p/voxel); one centroid per nonempty bucket, output
/// ordered by lexicographic bucket index. Colors, when present, are averaged.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

/// Halves resolution: extents and focal lengths halve, the principal point
/// maps pixel-center-preservingly: c' = (c + 0.5)/2 - 0.5.
Camera camera_halve(const Camera& cam);

/// Inverse of camera_halve (doubles resolution); used by supersampled
/// rasterization.
Camera camera_double(const Camera& cam);

/// Camera at `eye` looking toward `target`, with `up` mapping to image-up
/// (negative y). Intrinsics must be filled by the caller.
Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                 const Eigen::Vector3d& up);

}  // namespace npbg
