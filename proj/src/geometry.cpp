#include "npbg/geometry.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace npbg {

namespace {

void check_rotation(const Eigen::Matrix3d& R, const char* what) {
    const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-6)
        throw std::runtime_error(std::string(what) + ": invalid rotation (not orthonormal, err=" +
                                 std::to_string(ortho) + ")");
    if (std::abs(R.determinant() - 1.0) > 1e-6)
        throw std::runtime_error(std::string(what) + ": invalid rotation (det != +1)");
}

}  // namespace

void PointCloud::validate() const {
    for (const auto& p : positions)
        if (!p.allFinite()) throw std::runtime_error("PointCloud: non-finite position");
    if (colors) {
        if (colors->size() != positions.size())
            throw std::runtime_error("PointCloud: color count " + std::to_string(colors->size()) +
                                     " does not match point count " +
                                     std::to_string(positions.size()));
        for (const auto& c : *colors)
            if (!c.allFinite() || c.minCoeff() < 0.0 || c.maxCoeff() > 1.0)
                throw std::runtime_error("PointCloud: color outside [0,1]");
    }
}

void RigidTransform::validate() const { check_rotation(rotation, "RigidTransform"); }

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(rotation.transpose() * translation);
    return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& then) const {
    RigidTransform out;
    out.rotation = then.rotation * rotation;
    out.translation = then.rotation * translation + then.translation;
    return out;
}

void Camera::validate() const {
    check_rotation(R, "Camera");
    if (!(fx > 0.0) || !(fy > 0.0))
        throw std::runtime_error("Camera: focal lengths must be positive");
    if (width < 2 || height < 2)
        throw std::runtime_error("Camera: extents must be >= 2, got " + std::to_string(width) +
                                 "x" + std::to_string(height));
}

ProjectedPoint project_point(const Eigen::Vector3d& p, const Camera& cam) {
    ProjectedPoint out;
    double u, v, depth;
    if (!cam.project_continuous(p, u, v, depth)) {
        out.depth = depth;
        return out;
    }
    out.depth = depth;
    out.ix = round_half_up(u);
    out.iy = round_half_up(v);
    out.visible = out.ix >= 0 && out.ix < cam.width && out.iy >= 0 && out.iy < cam.height;
    return out;
}

std::vector<ProjectedPoint> project(const PointCloud& cloud, const Camera& cam) {
    cam.validate();
    std::vector<ProjectedPoint> out(cloud.positions.size());
    for (size_t i = 0; i < cloud.positions.size(); ++i)
        out[i] = project_point(cloud.positions[i], cam);
    return out;
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& transform) {
    transform.validate();
    PointCloud out;
    out.positions.reserve(cloud.positions.size());
    for (const auto& p : cloud.positions) out.positions.push_back(transform.apply(p));
    out.colors = cloud.colors;
    return out;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
    if (!(voxel > 0.0)) throw std::runtime_error("voxel_downsample: voxel size must be positive");
    struct Bucket {
        Eigen::Vector3d pos_sum = Eigen::Vector3d::Zero();
        Eigen::Vector3d color_sum = Eigen::Vector3d::Zero();
        int64_t count = 0;
    };
    std::map<std::array<int64_t, 3>, Bucket> buckets;  // ordered: lexicographic output
    const bool has_colors = cloud.colors.has_value();
    for (size_t i = 0; i < cloud.positions.size(); ++i) {
        const auto& p = cloud.positions[i];
        std::array<int64_t, 3> key = {static_cast<int64_t>(std::floor(p.x() / voxel)),
                                      static_cast<int64_t>(std::floor(p.y() / voxel)),
                                      static_cast<int64_t>(std::floor(p.z() / voxel))};
        Bucket& b = buckets[key];
        b.pos_sum += p;
        if (has_colors) b.color_sum += (*cloud.colors)[i];
        b.count += 1;
    }
    PointCloud out;
    out.positions.reserve(buckets.size());
    if (has_colors) out.colors.emplace();
    for (const auto& [key, b] : buckets) {
        out.positions.push_back(b.pos_sum / static_cast<double>(b.count));
        if (has_colors) out.colors->push_back(b.color_sum / static_cast<double>(b.count));
    }
    return out;
}

Camera camera_halve(const Camera& cam) {
    if (cam.width % 2 != 0 || cam.height % 2 != 0)
        throw std::runtime_error("camera_halve: odd extents " + std::to_string(cam.width) + "x" +
                                 std::to_string(cam.height));
    Camera out = cam;
    out.width = cam.width / 2;
    out.height = cam.height / 2;
    out.fx = cam.fx * 0.5;
    out.fy = cam.fy * 0.5;
    out.cx = (cam.cx + 0.5) * 0.5 - 0.5;
    out.cy = (cam.cy + 0.5) * 0.5 - 0.5;
    return out;
}

Camera camera_double(const Camera& cam) {
    Camera out = cam;
    out.width = cam.width * 2;
    out.height = cam.height * 2;
    out.fx = cam.fx * 2.0;
    out.fy = cam.fy * 2.0;
    out.cx = (cam.cx + 0.5) * 2.0 - 0.5;
    out.cy = (cam.cy + 0.5) * 2.0 - 0.5;
    return out;
}

Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                 const Eigen::Vector3d& up) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d right = (-up).cross(forward);
    if (right.norm() < 1e-12)
        throw std::runtime_error("look_at_rotation: view direction parallel to up vector");
    right.normalize();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d R;
    R.row(0) = right.transpose();
    R.row(1) = down.transpose();
    R.row(2) = forward.transpose();
    return R;
}

}  // namespace npbg
