#include <doctest.h>

#include <cmath>
#include <map>

#include "npbg/geometry.hpp"
#include "npbg/rng.hpp"

using namespace npbg;

namespace {

Camera basic_camera(int64_t w = 128, int64_t h = 128, double f = 100.0) {
    Camera cam;
    cam.width = w;
    cam.height = h;
    cam.fx = f;
    cam.fy = f;
    cam.cx = 64.0;
    cam.cy = 64.0;
    return cam;
}

Eigen::Matrix3d rotation_xyz(double ax, double ay, double az) {
    return (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

Camera random_camera(Rng& rng) {
    Camera cam = basic_camera();
    cam.fx = rng.uniform(50, 200);
    cam.fy = rng.uniform(50, 200);
    cam.cx = rng.uniform(40, 90);
    cam.cy = rng.uniform(40, 90);
    cam.R = rotation_xyz(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    cam.t = Eigen::Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    return cam;
}

// Scalar reimplementation of the projection formula, no Eigen involved.
struct ScalarProj {
    int64_t ix, iy;
    double depth;
    bool visible;
};

ScalarProj scalar_project(const double* p, const double r[9], const double t[3], double fx,
                          double fy, double cx, double cy, int64_t w, int64_t h) {
    const double x = r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + t[0];
    const double y = r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + t[1];
    const double z = r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + t[2];
    ScalarProj out{0, 0, z, false};
    if (z <= 1e-4) return out;
    out.ix = static_cast<int64_t>(std::floor(fx * x / z + cx + 0.5));
    out.iy = static_cast<int64_t>(std::floor(fy * y / z + cy + 0.5));
    out.visible = out.ix >= 0 && out.ix < w && out.iy >= 0 && out.iy < h;
    return out;
}

}  // namespace

TEST_CASE("projection of an optical-axis point") {
    Camera cam = basic_camera();
    ProjectedPoint pp = project_point(Eigen::Vector3d(0, 0, 1), cam);
    CHECK(pp.visible);
    CHECK(pp.ix == 64);
    CHECK(pp.iy == 64);
    CHECK(pp.depth == 1.0);
}

TEST_CASE("points at or behind the camera are invisible") {
    Camera cam = basic_camera();
    CHECK_FALSE(project_point(Eigen::Vector3d(0, 0, 0), cam).visible);
    CHECK_FALSE(project_point(Eigen::Vector3d(0, 0, -1), cam).visible);
    CHECK_FALSE(project_point(Eigen::Vector3d(0.1, 0.1, 5e-5), cam).visible);
}

TEST_CASE("projection matches the scalar formula on 1000 random points") {
    Rng rng(21);
    Camera cam = random_camera(rng);
    double r[9], t[3] = {cam.t.x(), cam.t.y(), cam.t.z()};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) r[i * 3 + k] = cam.R(i, k);
    PointCloud cloud;
    for (int i = 0; i < 1000; ++i)
        cloud.positions.emplace_back(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    const auto projected = project(cloud, cam);
    for (int i = 0; i < 1000; ++i) {
        const ScalarProj sp = scalar_project(cloud.positions[i].data(), r, t, cam.fx, cam.fy,
                                             cam.cx, cam.cy, cam.width, cam.height);
        CHECK(projected[i].visible == sp.visible);
        CHECK(projected[i].depth == sp.depth);
        if (sp.visible) {
            CHECK(projected[i].ix == sp.ix);
            CHECK(projected[i].iy == sp.iy);
        }
    }
}

TEST_CASE("rounding convention: floor(a + 0.5)") {
    CHECK(round_half_up(-0.5 + 1e-9) == 0);
    CHECK(round_half_up(-0.2) == 0);
    CHECK(round_half_up(0.0) == 0);
    CHECK(round_half_up(0.3) == 0);
    CHECK(round_half_up(0.5 - 1e-9) == 0);
    CHECK(round_half_up(0.5) == 1);
    CHECK(round_half_up(1.5) == 2);
    CHECK(round_half_up(-0.5) == 0);
    CHECK(round_half_up(-0.6) == -1);
}

TEST_CASE("depth is invariant under in-plane camera roll") {
    Rng rng(22);
    Camera cam = random_camera(rng);
    PointCloud cloud;
    for (int i = 0; i < 200; ++i)
        cloud.positions.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const auto base = project(cloud, cam);
    for (double roll : {0.3, 1.2, 2.7}) {
        Camera rolled = cam;
        Eigen::Matrix3d rz = rotation_xyz(0, 0, roll);
        rolled.R = rz * cam.R;
        rolled.t = rz * cam.t;
        const auto rotated = project(cloud, rolled);
        for (int i = 0; i < 200; ++i)
            CHECK(std::fabs(rotated[i].depth - base[i].depth) <= 1e-9);
    }
}

TEST_CASE("apply_transform: identity and pure translation") {
    PointCloud cloud;
    cloud.positions = {{0, 0, 0}, {1, 2, 3}, {-1, 0.5, 2}};
    PointCloud same = apply_transform(cloud, RigidTransform{});
    for (size_t i = 0; i < cloud.positions.size(); ++i)
        CHECK(same.positions[i] == cloud.positions[i]);

    RigidTransform shift;
    shift.translation = Eigen::Vector3d(1, 0, 0);
    PointCloud moved = apply_transform(cloud, shift);
    for (size_t i = 0; i < cloud.positions.size(); ++i) {
        CHECK(moved.positions[i].x() == cloud.positions[i].x() + 1.0);
        CHECK(moved.positions[i].y() == cloud.positions[i].y());
        CHECK(moved.positions[i].z() == cloud.positions[i].z());
    }
}

TEST_CASE("transform composed with its inverse is the identity") {
    Rng rng(23);
    RigidTransform t;
    t.rotation = rotation_xyz(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    t.translation = Eigen::Vector3d(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    PointCloud cloud;
    for (int i = 0; i < 100; ++i)
        cloud.positions.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    PointCloud back = apply_transform(apply_transform(cloud, t), t.inverse());
    for (int i = 0; i < 100; ++i)
        CHECK((back.positions[i] - cloud.positions[i]).norm() <= 1e-6);
}

TEST_CASE("apply_transform preserves pairwise distances") {
    Rng rng(24);
    RigidTransform t;
    t.rotation = rotation_xyz(0.4, -0.8, 1.9);
    t.translation = Eigen::Vector3d(3, -2, 1);
    PointCloud cloud;
    for (int i = 0; i < 50; ++i)
        cloud.positions.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    PointCloud moved = apply_transform(cloud, t);
    for (int i = 0; i < 50; ++i)
        for (int j = i + 1; j < 50; ++j) {
            const double before = (cloud.positions[i] - cloud.positions[j]).norm();
            const double after = (moved.positions[i] - moved.positions[j]).norm();
            CHECK(std::fabs(before - after) <= 1e-6);
        }
}

TEST_CASE("voxel_downsample collapses a single voxel to its centroid") {
    PointCloud cloud;
    cloud.positions = {{0.1, 0.1, 0.1}, {0.2, 0.3, 0.1}, {0.3, 0.2, 0.4}};
    PointCloud down = voxel_downsample(cloud, 1.0);
    REQUIRE(down.size() == 1);
    CHECK((down.positions[0] - Eigen::Vector3d(0.2, 0.2, 0.2)).norm() <= 1e-12);
}

TEST_CASE("well-separated points survive voxel_downsample") {
    PointCloud cloud;
    cloud.positions = {{0.5, 0.5, 0.5}, {2.5, 0.5, 0.5}, {0.5, 2.5, 0.5}, {2.5, 2.5, 2.5}};
    PointCloud down = voxel_downsample(cloud, 1.0);
    REQUIRE(down.size() == 4);
    std::map<std::array<double, 3>, int> found;
    for (const auto& p : down.positions) found[{p.x(), p.y(), p.z()}]++;
    for (const auto& p : cloud.positions) {
        std::array<double, 3> key = {p.x(), p.y(), p.z()};
        CHECK(found[key] == 1);
    }
}

TEST_CASE("voxel_downsample matches a hash-map oracle and stays in-cell") {
    Rng rng(25);
    PointCloud cloud;
    cloud.colors.emplace();
    const double voxel = 0.37;
    for (int i = 0; i < 500; ++i) {
        cloud.positions.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
        cloud.colors->emplace_back(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
    }
    PointCloud down = voxel_downsample(cloud, voxel);
    CHECK(down.size() <= cloud.size());

    std::map<std::array<int64_t, 3>, std::pair<Eigen::Vector3d, int>> buckets;
    std::map<std::array<int64_t, 3>, Eigen::Vector3d> color_sums;
    for (int i = 0; i < 500; ++i) {
        const auto& p = cloud.positions[i];
        std::array<int64_t, 3> key = {static_cast<int64_t>(std::floor(p.x() / voxel)),
                                      static_cast<int64_t>(std::floor(p.y() / voxel)),
                                      static_cast<int64_t>(std::floor(p.z() / voxel))};
        auto it = buckets.find(key);
        if (it == buckets.end()) {
            buckets[key] = {p, 1};
            color_sums[key] = (*cloud.colors)[i];
        } else {
            it->second.first += p;
            it->second.second += 1;
            color_sums[key] += (*cloud.colors)[i];
        }
    }
    REQUIRE(down.size() == static_cast<int64_t>(buckets.size()));
    size_t idx = 0;
    for (const auto& [key, entry] : buckets) {
        const Eigen::Vector3d centroid = entry.first / entry.second;
        CHECK((down.positions[idx] - centroid).norm() <= 1e-12);
        const Eigen::Vector3d mean_color = color_sums[key] / entry.second;
        CHECK(((*down.colors)[idx] - mean_color).norm() <= 1e-12);
        CHECK(static_cast<int64_t>(std::floor(down.positions[idx].x() / voxel)) == key[0]);
        CHECK(static_cast<int64_t>(std::floor(down.positions[idx].y() / voxel)) == key[1]);
        CHECK(static_cast<int64_t>(std::floor(down.positions[idx].z() / voxel)) == key[2]);
        ++idx;
    }
}

TEST_CASE("camera_halve applies the pixel-center-preserving rule") {
    Camera cam = basic_camera();
    cam.cx = 63.5;
    cam.cy = 63.5;
    Camera half = camera_halve(cam);
    CHECK(half.width == 64);
    CHECK(half.height == 64);
    CHECK(half.fx == 50.0);
    CHECK(half.cx == 31.5);
    CHECK(half.cy == 31.5);

    Camera quarter = camera_halve(half);
    CHECK(quarter.width == 32);
    CHECK(quarter.fx == 25.0);
    CHECK(quarter.cx == doctest::Approx((63.5 + 0.5) / 4.0 - 0.5));

    Camera odd = cam;
    odd.width = 127;
    CHECK_THROWS_WITH_AS(camera_halve(odd), doctest::Contains("odd"), std::runtime_error);
}

TEST_CASE("halved camera projects to (u+0.5)/2 - 0.5") {
    Rng rng(26);
    Camera cam = random_camera(rng);
    Camera half = camera_halve(cam);
    int checked = 0;
    while (checked < 200) {
        const Eigen::Vector3d p(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 4));
        double u, v, d, uh, vh, dh;
        if (!cam.project_continuous(p, u, v, d)) continue;
        REQUIRE(half.project_continuous(p, uh, vh, dh));
        CHECK(std::fabs(uh - ((u + 0.5) / 2.0 - 0.5)) <= 1e-6);
        CHECK(std::fabs(vh - ((v + 0.5) / 2.0 - 0.5)) <= 1e-6);
        ++checked;
    }
}

TEST_CASE("camera_double inverts camera_halve") {
    Camera cam = basic_camera();
    cam.cx = 63.5;
    Camera round_trip = camera_halve(camera_double(cam));
    CHECK(round_trip.fx == cam.fx);
    CHECK(round_trip.cx == cam.cx);
    CHECK(round_trip.width == cam.width);
}

TEST_CASE("camera validation rejects bad rotations and intrinsics") {
    Camera cam = basic_camera();
    cam.R(0, 0) = 2.0;
    CHECK_THROWS_WITH_AS(cam.validate(), doctest::Contains("invalid rotation"),
                         std::runtime_error);
    Camera mirrored = basic_camera();
    mirrored.R = Eigen::Matrix3d::Identity();
    mirrored.R(2, 2) = -1.0;
    mirrored.R(1, 1) = -1.0;
    CHECK_NOTHROW(mirrored.validate());  // proper 180-degree rotation
    Camera reflected = basic_camera();
    reflected.R = Eigen::Matrix3d::Identity();
    reflected.R(2, 2) = -1.0;
    CHECK_THROWS_WITH_AS(reflected.validate(), doctest::Contains("det"), std::runtime_error);
    Camera tiny = basic_camera(1, 1);
    CHECK_THROWS_WITH_AS(tiny.validate(), doctest::Contains(">= 2"), std::runtime_error);
}

TEST_CASE("look_at keeps the target on the optical axis with up up") {
    const Eigen::Vector3d eye(2, 1, 0.5), target(0, 0, 0);
    Camera cam = basic_camera();
    cam.R = look_at_rotation(eye, target, Eigen::Vector3d(0, 0, 1));
    cam.t = -cam.R * eye;
    cam.validate();
    double u, v, d;
    REQUIRE(cam.project_continuous(target, u, v, d));
    CHECK(u == doctest::Approx(cam.cx).epsilon(1e-9));
    CHECK(v == doctest::Approx(cam.cy).epsilon(1e-9));
    CHECK(d == doctest::Approx((eye - target).norm()));
    // A point above the target (world +z) appears above the center (smaller v).
    double u2, v2, d2;
    REQUIRE(cam.project_continuous(Eigen::Vector3d(0, 0, 0.2), u2, v2, d2));
    CHECK(v2 < cam.cy);
    CHECK(cam.viewpoint().isApprox(eye, 1e-12));
}
