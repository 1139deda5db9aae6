#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "npbg/rasterizer.hpp"
#include "npbg/rng.hpp"
#include "npbg/tape.hpp"
#include "npbg/tensor.hpp"

namespace npbg {

/// U-Net family: `levels` down/upsampling stages of two gated convolutions
/// each, raw-image injection at encoder stages 1..pyramid_levels, mirrored
/// decoder with skip concatenation, final 1x1 projection to RGB.
struct RenderNetConfig {
    int levels = 5;          // down/upsampling stages
    int in_channels = 8;     // descriptor dimensionality M
    int base_channels = 8;
    int pyramid_levels = 4;  // raw images T, <= levels
    static constexpr int output_channels = 3;

    void validate() const {
        if (levels < 1) throw std::runtime_error("RenderNetConfig: levels must be >= 1");
        if (base_channels < 1)
            throw std::runtime_error("RenderNetConfig: base_channels must be >= 1");
        if (in_channels < 1) throw std::runtime_error("RenderNetConfig: in_channels must be >= 1");
        if (pyramid_levels < 1 || pyramid_levels > levels)
            throw std::runtime_error("RenderNetConfig: pyramid_levels must satisfy 1 <= T <= " +
                                     std::to_string(levels));
    }

    int64_t stage_width(int stage) const { return int64_t(base_channels) << (stage - 1); }

    /// Input channel count of encoder stage e: previous features plus the
    /// injected raw image while e <= pyramid_levels.
    int64_t encoder_input(int stage) const {
        if (stage == 1) return in_channels;
        return stage_width(stage - 1) + (stage <= pyramid_levels ? in_channels : 0);
    }
};

template <typename T>
struct RenderNetParams {
    RenderNetConfig config;
    std::vector<std::pair<std::string, Tensor<T>>> entries;  // stable order

    Tensor<T>& at(const std::string& name) {
        for (auto& [n, t] : entries)
            if (n == name) return t;
        throw std::runtime_error("RenderNetParams: no tensor named '" + name + "'");
    }
    const Tensor<T>& at(const std::string& name) const {
        return const_cast<RenderNetParams*>(this)->at(name);
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : entries) n += t.numel();
        return n;
    }

    void set_requires_grad(bool value) {
        for (auto& [name, t] : entries) t.requires_grad = value;
    }
};

namespace detail {

template <typename T>
void add_gated_conv_params(RenderNetParams<T>& p, Rng& rng, const std::string& prefix, int64_t cin,
                           int64_t cout, int64_t k) {
    const double limit = std::sqrt(6.0 / static_cast<double>(cin * k * k));
    auto init_weight = [&] {
        Tensor<T> w = Tensor<T>::zeros({cout, cin, k, k});
        for (auto& v : *w.store) v = static_cast<T>(rng.uniform(-limit, limit));
        return w;
    };
    p.entries.emplace_back(prefix + ".wf", init_weight());
    p.entries.emplace_back(prefix + ".bf", Tensor<T>::zeros({cout}));
    p.entries.emplace_back(prefix + ".wg", init_weight());
    p.entries.emplace_back(prefix + ".bg", Tensor<T>::zeros({cout}));
}

}  // namespace detail

/// He-style uniform fan-in initialization from the given seed; all biases
/// zero. Same seed, same parameters, bitwise.
template <typename T>
RenderNetParams<T> build_rendernet(const RenderNetConfig& config, uint64_t seed) {
    config.validate();
    RenderNetParams<T> p;
    p.config = config;
    Rng rng(seed);
    const int L = config.levels;
    for (int e = 1; e <= L; ++e) {
        const std::string prefix = "enc" + std::to_string(e);
        detail::add_gated_conv_params(p, rng, prefix + ".gc1", config.encoder_input(e),
                                      config.stage_width(e), 3);
        detail::add_gated_conv_params(p, rng, prefix + ".gc2", config.stage_width(e),
                                      config.stage_width(e), 3);
    }
    detail::add_gated_conv_params(p, rng, "mid.gc1", config.stage_width(L), config.stage_width(L),
                                  3);
    detail::add_gated_conv_params(p, rng, "mid.gc2", config.stage_width(L), config.stage_width(L),
                                  3);
    for (int e = L; e >= 1; --e) {
        const std::string prefix = "dec" + std::to_string(e);
        const int64_t above = (e == L) ? config.stage_width(L) : config.stage_width(e + 1);
        detail::add_gated_conv_params(p, rng, prefix + ".gc1", above + config.stage_width(e),
                                      config.stage_width(e), 3);
        detail::add_gated_conv_params(p, rng, prefix + ".gc2", config.stage_width(e),
                                      config.stage_width(e), 3);
    }
    {
        const int64_t cin = config.stage_width(1);
        const double limit = std::sqrt(6.0 / static_cast<double>(cin));
        Tensor<T> w = Tensor<T>::zeros({RenderNetConfig::output_channels, cin, 1, 1});
        for (auto& v : *w.store) v = static_cast<T>(rng.uniform(-limit, limit));
        p.entries.emplace_back("out.w", std::move(w));
        p.entries.emplace_back("out.b", Tensor<T>::zeros({RenderNetConfig::output_channels}));
    }
    return p;
}

namespace detail {

template <typename T>
Tensor<T> gated_stage(Tape<T>& tape, const RenderNetParams<T>& p, const std::string& prefix,
                      const Tensor<T>& x) {
    Tensor<T> h = tape.gated_conv(x, p.at(prefix + ".gc1.wf"), p.at(prefix + ".gc1.bf"),
                                  p.at(prefix + ".gc1.wg"), p.at(prefix + ".gc1.bg"), 1, 1);
    return tape.gated_conv(h, p.at(prefix + ".gc2.wf"), p.at(prefix + ".gc2.bf"),
                           p.at(prefix + ".gc2.wg"), p.at(prefix + ".gc2.bg"), 1, 1);
}

}  // namespace detail

/// Maps the raw-image pyramid to an RGB image in (0,1). Differentiable
/// end-to-end, including into the pyramid tensors.
template <typename T>
Tensor<T> rendernet_forward(Tape<T>& tape, const RenderNetParams<T>& p,
                            const std::vector<Tensor<T>>& pyramid) {
    const RenderNetConfig& cfg = p.config;
    cfg.validate();
    if (static_cast<int>(pyramid.size()) != cfg.pyramid_levels)
        throw std::runtime_error("rendernet_forward: got " + std::to_string(pyramid.size()) +
                                 " pyramid levels, config expects " +
                                 std::to_string(cfg.pyramid_levels));
    const int64_t h = pyramid[0].shape[1], w = pyramid[0].shape[2];
    const int64_t div = int64_t(1) << cfg.levels;
    if (h % div != 0 || w % div != 0)
        throw std::runtime_error("rendernet_forward: extents " + std::to_string(w) + "x" +
                                 std::to_string(h) + " not divisible by 2^" +
                                 std::to_string(cfg.levels));
    for (size_t t = 0; t < pyramid.size(); ++t) {
        const auto& s = pyramid[t].shape;
        if (s.size() != 3 || s[0] != cfg.in_channels || s[1] != (h >> t) || s[2] != (w >> t))
            throw std::runtime_error("rendernet_forward: pyramid level " + std::to_string(t + 1) +
                                     " has shape " + shape_str(pyramid[t].shape) + ", expected (" +
                                     std::to_string(cfg.in_channels) + "," +
                                     std::to_string(h >> t) + "," + std::to_string(w >> t) + ")");
    }
    std::vector<Tensor<T>> skips;
    Tensor<T> x = detail::gated_stage(tape, p, "enc1", pyramid[0]);
    skips.push_back(x);
    for (int e = 2; e <= cfg.levels; ++e) {
        Tensor<T> down = tape.downsample2x(x);
        if (e <= cfg.pyramid_levels) down = tape.concat_channels(down, pyramid[e - 1]);
        x = detail::gated_stage(tape, p, "enc" + std::to_string(e), down);
        skips.push_back(x);
    }
    x = detail::gated_stage(tape, p, "mid", tape.downsample2x(x));
    for (int e = cfg.levels; e >= 1; --e) {
        Tensor<T> up = tape.concat_channels(tape.upsample2x(x), skips[e - 1]);
        x = detail::gated_stage(tape, p, "dec" + std::to_string(e), up);
    }
    return tape.sigmoid(tape.conv2d(x, p.at("out.w"), p.at("out.b"), 1, 0));
}

/// Convenience overload taking a raw pyramid directly (no descriptor
/// gradient path).
template <typename T>
Tensor<T> rendernet_forward(Tape<T>& tape, const RenderNetParams<T>& p,
                            const RawPyramid<T>& pyramid) {
    std::vector<Tensor<T>> tensors;
    tensors.reserve(pyramid.levels.size());
    for (const auto& lvl : pyramid.levels)
        tensors.emplace_back(std::vector<int64_t>{lvl.channels, lvl.height, lvl.width}, lvl.values);
    return rendernet_forward(tape, p, tensors);
}

}  // namespace npbg
