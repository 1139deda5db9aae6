#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "npbg/geometry.hpp"
#include "npbg/tape.hpp"
#include "npbg/tensor.hpp"

namespace npbg {

inline constexpr int64_t kNoWinner = -1;

/// M-channel raw image produced by z-buffer point splatting. Where winner is
/// kNoWinner the channel vector is zero and depth is +inf; where winner = i
/// the channel vector equals descriptor row i exactly.
template <typename T>
struct RawImage {
    int64_t channels = 0, height = 0, width = 0;
    std::vector<T> values;        // [M, H, W]
    std::vector<int64_t> winner;  // [H, W]
    std::vector<double> depth;    // [H, W]

    static RawImage empty(int64_t m, int64_t h, int64_t w) {
        RawImage img;
        img.channels = m;
        img.height = h;
        img.width = w;
        img.values.assign(static_cast<size_t>(m * h * w), T(0));
        img.winner.assign(static_cast<size_t>(h * w), kNoWinner);
        img.depth.assign(static_cast<size_t>(h * w), std::numeric_limits<double>::infinity());
        return img;
    }
};

template <typename T>
struct RawPyramid {
    std::vector<RawImage<T>> levels;  // level t (1-based) has extents H/2^(t-1) x W/2^(t-1)
};

template <typename T>
Tensor<T> make_descriptors(int64_t n, int64_t m, bool requires_grad) {
    return Tensor<T>::zeros({n, m}, requires_grad);
}

namespace detail {

template <typename T>
void check_descriptors(const PointCloud& cloud, const Tensor<T>& desc) {
    if (desc.rank() != 2)
        throw std::runtime_error("rasterize: descriptors must be rank-2 [N,M], got " +
                                 shape_str(desc.shape));
    if (desc.shape[0] != cloud.size())
        throw std::runtime_error("rasterize: descriptor rows " + std::to_string(desc.shape[0]) +
                                 " do not match point count " + std::to_string(cloud.size()));
}

}  // namespace detail

/// Z-buffer rasterization: per pixel the winner minimizes (depth, point index)
/// lexicographically, making the result independent of iteration order.
template <typename T>
RawImage<T> rasterize(const PointCloud& cloud, const Tensor<T>& desc, const Camera& cam) {
    detail::check_descriptors(cloud, desc);
    cam.validate();
    const int64_t m = desc.shape[1];
    RawImage<T> img = RawImage<T>::empty(m, cam.height, cam.width);
    for (int64_t i = 0; i < cloud.size(); ++i) {
        const ProjectedPoint pp = project_point(cloud.positions[i], cam);
        if (!pp.visible) continue;
        const int64_t px = pp.iy * cam.width + pp.ix;
        if (pp.depth < img.depth[px] || (pp.depth == img.depth[px] && i < img.winner[px])) {
            img.depth[px] = pp.depth;
            img.winner[px] = i;
        }
    }
    const int64_t hw = cam.height * cam.width;
    const T* d = desc.data();
    for (int64_t px = 0; px < hw; ++px) {
        const int64_t win = img.winner[px];
        if (win == kNoWinner) continue;
        for (int64_t c = 0; c < m; ++c) img.values[c * hw + px] = d[win * m + c];
    }
    return img;
}

/// Renders the cloud onto a pyramid of canvases; level t uses camera_halve
/// applied (t-1) times with an independent z-buffer.
template <typename T>
RawPyramid<T> rasterize_pyramid(const PointCloud& cloud, const Tensor<T>& desc, const Camera& cam,
                                int levels) {
    if (levels < 1) throw std::runtime_error("rasterize_pyramid: need at least one level");
    const int64_t div = int64_t(1) << (levels - 1);
    if (cam.width % div != 0 || cam.height % div != 0)
        throw std::runtime_error("rasterize_pyramid: extents " + std::to_string(cam.width) + "x" +
                                 std::to_string(cam.height) + " not divisible by 2^" +
                                 std::to_string(levels - 1));
    RawPyramid<T> pyr;
    Camera level_cam = cam;
    for (int t = 0; t < levels; ++t) {
        if (t > 0) level_cam = camera_halve(level_cam);
        pyr.levels.push_back(rasterize(cloud, desc, level_cam));
    }
    return pyr;
}

/// Scatter of per-pixel upstream gradients onto descriptor rows: each winning
/// pixel contributes its gradient vector to the winning point's row. Points
/// never winning a pixel receive zero.
template <typename T>
std::vector<T> rasterize_backward(const RawPyramid<T>& pyr,
                                  const std::vector<std::vector<T>>& upstream, int64_t point_count) {
    if (upstream.size() != pyr.levels.size())
        throw std::runtime_error("rasterize_backward: got " + std::to_string(upstream.size()) +
                                 " upstream levels for a " + std::to_string(pyr.levels.size()) +
                                 "-level pyramid");
    if (pyr.levels.empty()) throw std::runtime_error("rasterize_backward: empty pyramid");
    const int64_t m = pyr.levels[0].channels;
    std::vector<T> grad(static_cast<size_t>(point_count * m), T(0));
    for (size_t lvl = 0; lvl < pyr.levels.size(); ++lvl) {
        const RawImage<T>& img = pyr.levels[lvl];
        const int64_t hw = img.height * img.width;
        if (static_cast<int64_t>(upstream[lvl].size()) != img.channels * hw)
            throw std::runtime_error("rasterize_backward: upstream level " + std::to_string(lvl) +
                                     " has " + std::to_string(upstream[lvl].size()) +
                                     " values, expected " + std::to_string(img.channels * hw));
        const T* up = upstream[lvl].data();
        for (int64_t px = 0; px < hw; ++px) {
            const int64_t win = img.winner[px];
            if (win == kNoWinner) continue;
            for (int64_t c = 0; c < m; ++c) grad[win * m + c] += up[c * hw + px];
        }
    }
    return grad;
}

namespace detail {

template <typename T>
struct AaRaster {
    RawImage<T> image;                 // box-downsampled channels; winner/depth unset
    std::vector<int64_t> hires_winner; // winner map at the supersampled resolution
    int64_t hires_h = 0, hires_w = 0;
};

template <typename T>
AaRaster<T> rasterize_aa_internal(const PointCloud& cloud, const Tensor<T>& desc,
                                  const Camera& cam, int factor) {
    if (factor != 1 && factor != 2 && factor != 4)
        throw std::runtime_error("rasterize_aa: factor must be 1, 2 or 4, got " +
                                 std::to_string(factor));
    Camera hi = cam;
    int halvings = 0;
    for (int f = factor; f > 1; f /= 2) {
        hi = camera_double(hi);
        ++halvings;
    }
    RawImage<T> hires = rasterize(cloud, desc, hi);
    AaRaster<T> out;
    out.hires_winner = hires.winner;
    out.hires_h = hires.height;
    out.hires_w = hires.width;
    if (factor == 1) {
        out.image = std::move(hires);
        return out;
    }
    std::vector<T> vals = std::move(hires.values);
    int64_t h = hires.height, w = hires.width;
    for (int i = 0; i < halvings; ++i) {
        vals = box_down2(vals, hires.channels, h, w);
        h /= 2;
        w /= 2;
    }
    out.image.channels = hires.channels;
    out.image.height = cam.height;
    out.image.width = cam.width;
    out.image.values = std::move(vals);
    out.image.winner.assign(static_cast<size_t>(cam.height * cam.width), kNoWinner);
    out.image.depth.assign(static_cast<size_t>(cam.height * cam.width),
                           std::numeric_limits<double>::infinity());
    return out;
}

}  // namespace detail

/// Supersampled rasterization: renders at factor x resolution and box-averages
/// down. The winner map is not defined for factor > 1 (gradients distribute to
/// all contributing winners weighted 1/factor^2; see rasterize_into_tape).
template <typename T>
RawImage<T> rasterize_aa(const PointCloud& cloud, const Tensor<T>& desc, const Camera& cam,
                         int factor) {
    return detail::rasterize_aa_internal(cloud, desc, cam, factor).image;
}

/// Per-pixel merge keeping the lexicographically smaller (depth, source-tag,
/// winner-index) record; `a` carries the lower tag.
template <typename T>
RawImage<T> merge_rasters(const RawImage<T>& a, const RawImage<T>& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw std::runtime_error("merge_rasters: shape mismatch " + std::to_string(a.channels) +
                                 "x" + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                 " vs " + std::to_string(b.channels) + "x" +
                                 std::to_string(b.height) + "x" + std::to_string(b.width));
    RawImage<T> out = a;
    const int64_t hw = a.height * a.width;
    for (int64_t px = 0; px < hw; ++px) {
        if (b.depth[px] < a.depth[px]) {
            out.depth[px] = b.depth[px];
            out.winner[px] = b.winner[px];
            for (int64_t c = 0; c < a.channels; ++c)
                out.values[c * hw + px] = b.values[c * hw + px];
        }
    }
    return out;
}

/// Rasterizes the descriptor pyramid as tape tensors, recording the scatter
/// backward onto the descriptor rows so the whole render is differentiable
/// w.r.t. descriptors. With aa_factor > 1 each level is supersampled and the
/// upstream gradient is spread uniformly over the factor^2 subpixels.
template <typename T>
std::vector<Tensor<T>> rasterize_into_tape(Tape<T>& tape, const PointCloud& cloud,
                                           const Tensor<T>& desc, const Camera& cam, int levels,
                                           int aa_factor = 1) {
    tape.ensure_open();
    detail::check_descriptors(cloud, desc);
    if (levels < 1) throw std::runtime_error("rasterize_into_tape: need at least one level");
    const int64_t div = int64_t(1) << (levels - 1);
    if (cam.width % div != 0 || cam.height % div != 0)
        throw std::runtime_error("rasterize_into_tape: extents not divisible by 2^" +
                                 std::to_string(levels - 1));
    const int64_t m = desc.shape[1];
    std::vector<Tensor<T>> out;
    std::vector<std::vector<int64_t>> winners;
    std::vector<std::pair<int64_t, int64_t>> winner_dims;
    Camera level_cam = cam;
    for (int t = 0; t < levels; ++t) {
        if (t > 0) level_cam = camera_halve(level_cam);
        detail::AaRaster<T> aa = detail::rasterize_aa_internal(cloud, desc, level_cam, aa_factor);
        Tensor<T> lt({m, level_cam.height, level_cam.width}, std::move(aa.image.values));
        if (desc.requires_grad) {
            tape.mark(lt);
        }
        out.push_back(std::move(lt));
        winners.push_back(std::move(aa.hires_winner));
        winner_dims.emplace_back(aa.hires_h, aa.hires_w);
    }
    if (desc.requires_grad) {
        auto ds = desc.store;
        std::vector<std::shared_ptr<std::vector<T>>> level_stores;
        for (auto& t : out) level_stores.push_back(t.store);
        const T weight = T(1) / static_cast<T>(aa_factor * aa_factor);
        tape.record([&tape, ds, level_stores, winners = std::move(winners), winner_dims, m,
                     aa_factor, weight] {
            for (size_t lvl = 0; lvl < level_stores.size(); ++lvl) {
                auto* go = tape.grad_out(level_stores[lvl].get());
                if (!go) continue;
                std::vector<T>& gd = tape.grad_acc(ds.get(), ds->size());
                const auto& win = winners[lvl];
                const int64_t hh = winner_dims[lvl].first, hw = winner_dims[lvl].second;
                const int64_t lo_w = hw / aa_factor;
                const int64_t lo_hw = (hh / aa_factor) * lo_w;
                for (int64_t hy = 0; hy < hh; ++hy)
                    for (int64_t hx = 0; hx < hw; ++hx) {
                        const int64_t i = win[hy * hw + hx];
                        if (i == kNoWinner) continue;
                        const int64_t lo_px = (hy / aa_factor) * lo_w + hx / aa_factor;
                        for (int64_t c = 0; c < m; ++c)
                            gd[i * m + c] += (*go)[c * lo_hw + lo_px] * weight;
                    }
            }
        });
    }
    return out;
}

}  // namespace npbg
