#include <doctest.h>

#include <cmath>
#include <limits>

#include "npbg/rasterizer.hpp"
#include "npbg/rng.hpp"
#include "npbg/tape.hpp"

using namespace npbg;

namespace {

Camera basic_camera(int64_t w, int64_t h, double f) {
    Camera cam;
    cam.width = w;
    cam.height = h;
    cam.fx = f;
    cam.fy = f;
    cam.cx = (static_cast<double>(w) - 1.0) / 2.0;
    cam.cy = (static_cast<double>(h) - 1.0) / 2.0;
    return cam;
}

Camera random_camera(Rng& rng, int64_t w, int64_t h) {
    Camera cam = basic_camera(w, h, rng.uniform(20, 80));
    const Eigen::Vector3d eye(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                              rng.uniform(-4, -2.5));
    const Eigen::Vector3d target(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.0);
    cam.R = look_at_rotation(eye, target, Eigen::Vector3d(0, 1, 0));
    cam.t = -cam.R * eye;
    return cam;
}

PointCloud random_cloud(Rng& rng, int64_t n) {
    PointCloud cloud;
    for (int64_t i = 0; i < n; ++i)
        cloud.positions.emplace_back(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                                     rng.uniform(-1, 1));
    return cloud;
}

template <typename T>
Tensor<T> random_desc(Rng& rng, int64_t n, int64_t m) {
    Tensor<T> d = Tensor<T>::zeros({n, m});
    for (auto& v : *d.store) v = static_cast<T>(rng.uniform(-1, 1));
    return d;
}

// Independent per-pixel brute force: scan every point for every pixel and
// keep the (depth, index) minimum.
template <typename T>
RawImage<T> raster_oracle(const PointCloud& cloud, const Tensor<T>& desc, const Camera& cam) {
    const auto pts = project(cloud, cam);
    const int64_t m = desc.shape[1];
    RawImage<T> img = RawImage<T>::empty(m, cam.height, cam.width);
    const int64_t hw = cam.height * cam.width;
    for (int64_t y = 0; y < cam.height; ++y)
        for (int64_t x = 0; x < cam.width; ++x) {
            double best_depth = std::numeric_limits<double>::infinity();
            int64_t best = kNoWinner;
            for (int64_t i = 0; i < cloud.size(); ++i) {
                if (!pts[i].visible || pts[i].ix != x || pts[i].iy != y) continue;
                if (pts[i].depth < best_depth || (pts[i].depth == best_depth && i < best)) {
                    best_depth = pts[i].depth;
                    best = i;
                }
            }
            const int64_t px = y * cam.width + x;
            if (best == kNoWinner) continue;
            img.winner[px] = best;
            img.depth[px] = best_depth;
            for (int64_t c = 0; c < m; ++c) img.values[c * hw + px] = desc.data()[best * m + c];
        }
    return img;
}

template <typename T>
bool images_bitwise_equal(const RawImage<T>& a, const RawImage<T>& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width) return false;
    if (a.winner != b.winner) return false;
    for (size_t i = 0; i < a.depth.size(); ++i)
        if (a.depth[i] != b.depth[i] && !(std::isinf(a.depth[i]) && std::isinf(b.depth[i])))
            return false;
    return a.values == b.values;
}

}  // namespace

TEST_CASE("empty cloud rasterizes to an all-empty image") {
    PointCloud cloud;
    Tensorf desc = Tensorf::zeros({0, 4});
    RawImage<float> img = rasterize(cloud, desc, basic_camera(16, 16, 20));
    for (int64_t w : img.winner) CHECK(w == kNoWinner);
    for (float v : img.values) CHECK(v == 0.0f);
    for (double d : img.depth) CHECK(std::isinf(d));
}

TEST_CASE("z-buffer keeps the nearer of two points in one pixel") {
    PointCloud cloud;
    cloud.positions = {{0, 0, 2.0}, {0, 0, 1.0}};
    Tensorf desc({2, 2}, {5.0f, 6.0f, 7.0f, 8.0f});
    Camera cam = basic_camera(8, 8, 10);
    RawImage<float> img = rasterize(cloud, desc, cam);
    const int64_t px = round_half_up(cam.cy) * cam.width + round_half_up(cam.cx);
    CHECK(img.winner[px] == 1);
    CHECK(img.depth[px] == 1.0);
    CHECK(img.values[0 * 64 + px] == 7.0f);
    CHECK(img.values[1 * 64 + px] == 8.0f);
}

TEST_CASE("descriptor row count must match the cloud") {
    Rng rng(1);
    PointCloud cloud = random_cloud(rng, 5);
    Tensorf desc = Tensorf::zeros({4, 3});
    CHECK_THROWS_WITH_AS(rasterize(cloud, desc, basic_camera(8, 8, 10)),
                         doctest::Contains("descriptor rows"), std::runtime_error);
}

TEST_CASE("rasterize equals the brute-force oracle bitwise") {
    Rng rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        const int64_t n = rng.uniform_int(500) + 1;
        const int64_t w = 8 + 4 * rng.uniform_int(15), h = 8 + 4 * rng.uniform_int(15);
        PointCloud cloud = random_cloud(rng, n);
        Tensord desc = random_desc<double>(rng, n, 1 + rng.uniform_int(8));
        Camera cam = random_camera(rng, w, h);
        RawImage<double> fast = rasterize(cloud, desc, cam);
        RawImage<double> slow = raster_oracle(cloud, desc, cam);
        CHECK(images_bitwise_equal(fast, slow));
    }
}

TEST_CASE("deleting a pixel's winner yields the next-best point") {
    Rng rng(32);
    PointCloud cloud = random_cloud(rng, 300);
    Tensord desc = random_desc<double>(rng, 300, 2);
    Camera cam = random_camera(rng, 32, 32);
    RawImage<double> img = rasterize(cloud, desc, cam);
    // Pick the first occupied pixel, remove its winner, re-rasterize.
    for (int64_t px = 0; px < 32 * 32; ++px) {
        const int64_t win = img.winner[px];
        if (win == kNoWinner) continue;
        PointCloud reduced;
        std::vector<double> dvals;
        for (int64_t i = 0; i < cloud.size(); ++i) {
            if (i == win) continue;
            reduced.positions.push_back(cloud.positions[i]);
            dvals.push_back(desc.data()[i * 2]);
            dvals.push_back(desc.data()[i * 2 + 1]);
        }
        Tensord rdesc({reduced.size(), 2}, std::move(dvals));
        RawImage<double> again = rasterize(reduced, rdesc, cam);
        RawImage<double> oracle = raster_oracle(reduced, rdesc, cam);
        CHECK(images_bitwise_equal(again, oracle));
        break;
    }
}

TEST_CASE("rasterize is linear in the descriptors with fixed winners") {
    Rng rng(33);
    PointCloud cloud = random_cloud(rng, 200);
    Tensord d1 = random_desc<double>(rng, 200, 3);
    Tensord d2 = random_desc<double>(rng, 200, 3);
    Camera cam = random_camera(rng, 24, 24);
    const double alpha = 0.625, beta = -1.25;  // exactly representable
    Tensord mix = Tensord::zeros({200, 3});
    for (int64_t i = 0; i < mix.numel(); ++i)
        mix.mutable_data()[i] = alpha * d1.data()[i] + beta * d2.data()[i];
    RawImage<double> ra = rasterize(cloud, d1, cam);
    RawImage<double> rb = rasterize(cloud, d2, cam);
    RawImage<double> rm = rasterize(cloud, mix, cam);
    for (size_t i = 0; i < rm.values.size(); ++i)
        CHECK(rm.values[i] == alpha * ra.values[i] + beta * rb.values[i]);
}

TEST_CASE("pyramid levels follow the halving size schedule") {
    Rng rng(34);
    PointCloud cloud = random_cloud(rng, 100);
    Tensorf desc = random_desc<float>(rng, 100, 4);
    Camera cam = random_camera(rng, 128, 128);
    RawPyramid<float> pyr = rasterize_pyramid(cloud, desc, cam, 4);
    REQUIRE(pyr.levels.size() == 4);
    CHECK(pyr.levels[0].width == 128);
    CHECK(pyr.levels[1].width == 64);
    CHECK(pyr.levels[2].width == 32);
    CHECK(pyr.levels[3].width == 16);

    RawPyramid<float> one = rasterize_pyramid(cloud, desc, cam, 1);
    CHECK(images_bitwise_equal(one.levels[0], rasterize(cloud, desc, cam)));

    Camera odd = cam;
    odd.width = 100;  // not divisible by 2^3
    CHECK_THROWS_WITH_AS(rasterize_pyramid(cloud, desc, odd, 4),
                         doctest::Contains("divisible"), std::runtime_error);
}

TEST_CASE("a point visible at a coarse level is inside the finer frustum too") {
    Rng rng(35);
    for (int trial = 0; trial < 10; ++trial) {
        PointCloud cloud = random_cloud(rng, 300);
        Tensorf desc = random_desc<float>(rng, 300, 2);
        Camera cam = random_camera(rng, 64, 64);
        Camera coarse = camera_halve(cam);
        const auto fine_pts = project(cloud, cam);
        const auto coarse_pts = project(cloud, coarse);
        for (int64_t i = 0; i < cloud.size(); ++i)
            if (coarse_pts[i].visible) CHECK(fine_pts[i].visible);
    }
}

TEST_CASE("rasterize_backward: zero upstream gives zero gradient") {
    Rng rng(36);
    PointCloud cloud = random_cloud(rng, 50);
    Tensord desc = random_desc<double>(rng, 50, 3);
    Camera cam = random_camera(rng, 16, 16);
    RawPyramid<double> pyr = rasterize_pyramid(cloud, desc, cam, 2);
    std::vector<std::vector<double>> upstream;
    for (const auto& lvl : pyr.levels)
        upstream.emplace_back(lvl.channels * lvl.height * lvl.width, 0.0);
    const auto grad = rasterize_backward(pyr, upstream, 50);
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("rasterize_backward: single winning pixel scatters e_k") {
    PointCloud cloud;
    cloud.positions = {{0, 0, 1.0}};
    Tensord desc = Tensord::zeros({1, 3});
    Camera cam = basic_camera(8, 8, 10);
    RawPyramid<double> pyr = rasterize_pyramid(cloud, desc, cam, 1);
    const int64_t px = round_half_up(cam.cy) * cam.width + round_half_up(cam.cx);
    REQUIRE(pyr.levels[0].winner[px] == 0);
    std::vector<std::vector<double>> upstream(1, std::vector<double>(3 * 64, 0.0));
    upstream[0][1 * 64 + px] = 1.0;  // e_1 at the winning pixel
    const auto grad = rasterize_backward(pyr, upstream, 1);
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 1.0);
    CHECK(grad[2] == 0.0);
}

TEST_CASE("descriptor scatter matches finite differences") {
    Rng rng(37);
    PointCloud cloud = random_cloud(rng, 40);
    Tensord desc = random_desc<double>(rng, 40, 3);
    desc.requires_grad = true;
    Camera cam = random_camera(rng, 16, 16);

    auto loss_of = [&](Taped& tape) {
        std::vector<Tensord> pyr = rasterize_into_tape(tape, cloud, desc, cam, 2);
        Tensord total = tape.mean(tape.mul(pyr[0], pyr[0]));
        total = tape.add(total, tape.mean(tape.mul(pyr[1], pyr[1])));
        return total;
    };
    Taped tape;
    Tensord loss = loss_of(tape);
    tape.backward(loss);
    const std::vector<double> analytic = tape.grad_of(desc);
    const double h = 1e-5;
    for (int64_t i = 0; i < desc.numel(); ++i) {
        double* slot = desc.mutable_data() + i;
        const double saved = *slot;
        *slot = saved + h;
        Taped tp;
        const double up = loss_of(tp).item();
        *slot = saved - h;
        Taped tm;
        const double dn = loss_of(tm).item();
        *slot = saved;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::fabs(analytic[i] - fd) / std::max(1.0, std::fabs(fd)) <= 1e-4);
    }
}

TEST_CASE("rasterize_aa with factor 1 equals rasterize") {
    Rng rng(38);
    PointCloud cloud = random_cloud(rng, 200);
    Tensorf desc = random_desc<float>(rng, 200, 4);
    Camera cam = random_camera(rng, 32, 32);
    CHECK(images_bitwise_equal(rasterize_aa(cloud, desc, cam, 1), rasterize(cloud, desc, cam)));
    CHECK_THROWS_WITH_AS(rasterize_aa(cloud, desc, cam, 3), doctest::Contains("factor"),
                         std::runtime_error);
}

TEST_CASE("rasterize_aa k=2 equals rasterize-at-2x composed with the box downsample") {
    Rng rng(39);
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t n = 50 + rng.uniform_int(200);
        PointCloud cloud = random_cloud(rng, n);
        Tensorf desc = random_desc<float>(rng, n, 3);
        Camera cam = random_camera(rng, 16 + 4 * rng.uniform_int(8), 16 + 4 * rng.uniform_int(8));
        RawImage<float> aa = rasterize_aa(cloud, desc, cam, 2);

        RawImage<float> hi = rasterize(cloud, desc, camera_double(cam));
        Tapef tape;
        Tensorf hi_tensor({hi.channels, hi.height, hi.width}, hi.values);
        Tensorf down = tape.downsample2x(hi_tensor);
        REQUIRE(static_cast<int64_t>(aa.values.size()) == down.numel());
        for (int64_t i = 0; i < down.numel(); ++i) CHECK(aa.values[i] == down.data()[i]);
    }
}

TEST_CASE("dense constant-descriptor cloud gives a constant AA image") {
    PointCloud cloud;
    // A dense plane: several points per 2x subpixel.
    for (double y = -2.0; y <= 2.0; y += 0.004)
        for (double x = -2.0; x <= 2.0; x += 0.004) cloud.positions.emplace_back(x, y, 2.0);
    Tensorf desc = Tensorf::full({cloud.size(), 2}, 0.625f);
    Camera cam = basic_camera(16, 16, 20);
    RawImage<float> aa = rasterize_aa(cloud, desc, cam, 2);
    for (float v : aa.values) CHECK(v == 0.625f);
}

TEST_CASE("merge with an empty raster is the identity and merge is idempotent") {
    Rng rng(40);
    PointCloud cloud = random_cloud(rng, 150);
    Tensorf desc = random_desc<float>(rng, 150, 3);
    Camera cam = random_camera(rng, 24, 24);
    RawImage<float> img = rasterize(cloud, desc, cam);
    RawImage<float> empty = RawImage<float>::empty(3, 24, 24);
    CHECK(images_bitwise_equal(merge_rasters(img, empty), img));
    CHECK(images_bitwise_equal(merge_rasters(empty, img), img));
    CHECK(images_bitwise_equal(merge_rasters(img, img), img));
    RawImage<float> other = RawImage<float>::empty(2, 24, 24);
    CHECK_THROWS_WITH_AS(merge_rasters(img, other), doctest::Contains("shape"),
                         std::runtime_error);
}

TEST_CASE("merging per-part rasters equals rasterizing the union") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t na = 50 + rng.uniform_int(100), nb = 50 + rng.uniform_int(100);
        PointCloud a = random_cloud(rng, na), b = random_cloud(rng, nb);
        Tensord da = random_desc<double>(rng, na, 3), db = random_desc<double>(rng, nb, 3);
        Camera cam = random_camera(rng, 32, 32);

        PointCloud both = a;
        both.positions.insert(both.positions.end(), b.positions.begin(), b.positions.end());
        Tensord dboth = Tensord::zeros({na + nb, 3});
        std::copy(da.data(), da.data() + da.numel(), dboth.mutable_data());
        std::copy(db.data(), db.data() + db.numel(), dboth.mutable_data() + da.numel());

        RawImage<double> ra = rasterize(a, da, cam);
        RawImage<double> rb = rasterize(b, db, cam);
        RawImage<double> merged = merge_rasters(ra, rb);
        // merge keeps b only on strictly smaller depth; map those winner
        // indices into the union numbering.
        for (size_t px = 0; px < merged.winner.size(); ++px)
            if (merged.winner[px] != kNoWinner && rb.depth[px] < ra.depth[px])
                merged.winner[px] += na;
        RawImage<double> whole = rasterize(both, dboth, cam);
        CHECK(images_bitwise_equal(merged, whole));
    }
}

TEST_CASE("two-plane scene: far-plane winner share shrinks with coarser levels") {
    // Sparse front plane at z=2, dense back plane at z=3.
    PointCloud cloud;
    std::vector<int> is_far;
    for (double y = -1.6; y <= 1.6; y += 0.055)
        for (double x = -1.6; x <= 1.6; x += 0.055) {
            cloud.positions.emplace_back(x, y, 2.0);
            is_far.push_back(0);
        }
    for (double y = -2.6; y <= 2.6; y += 0.012)
        for (double x = -2.6; x <= 2.6; x += 0.012) {
            cloud.positions.emplace_back(x, y, 3.0);
            is_far.push_back(1);
        }
    Tensorf desc = Tensorf::full({cloud.size(), 1}, 1.0f);
    Camera cam = basic_camera(64, 64, 55);
    RawPyramid<float> pyr = rasterize_pyramid(cloud, desc, cam, 4);
    std::vector<double> far_fraction;
    for (const auto& lvl : pyr.levels) {
        int64_t far = 0;
        for (int64_t w : lvl.winner)
            if (w != kNoWinner && is_far[w]) ++far;
        far_fraction.push_back(static_cast<double>(far) /
                               static_cast<double>(lvl.winner.size()));
    }
    CHECK(far_fraction[0] > 0.05);  // bleeding present at the finest level
    for (size_t t = 1; t < far_fraction.size(); ++t)
        CHECK(far_fraction[t] <= far_fraction[t - 1]);
    CHECK(far_fraction.back() == 0.0);
}
