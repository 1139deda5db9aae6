#include "npbg/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace npbg {

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "l1") return LossKind::L1;
    if (s == "mse") return LossKind::MSE;
    if (s == "fixed-feature") return LossKind::FixedFeature;
    throw std::runtime_error("unknown loss '" + s + "' (expected l1|mse|fixed-feature)");
}

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::L1: return "l1";
        case LossKind::MSE: return "mse";
        case LossKind::FixedFeature: return "fixed-feature";
    }
    return "?";
}

namespace {

constexpr uint64_t kFixedFeatureSeed = 0x00f1d0;
constexpr int kFixedFeatureStages = 3;
constexpr int64_t kFixedFeatureWidth = 8;

}  // namespace

template <typename T>
const RenderNetParams<T>& fixed_feature_weights() {
    // Frozen random gated-conv weights, built once per scalar type.
    static const RenderNetParams<T> params = [] {
        RenderNetParams<T> p;
        Rng rng(kFixedFeatureSeed);
        int64_t cin = 3;
        for (int s = 0; s < kFixedFeatureStages; ++s) {
            detail::add_gated_conv_params(p, rng, "stage" + std::to_string(s), cin,
                                          kFixedFeatureWidth, 3);
            cin = kFixedFeatureWidth;
        }
        return p;
    }();
    return params;
}

template const RenderNetParams<float>& fixed_feature_weights<float>();
template const RenderNetParams<double>& fixed_feature_weights<double>();

template <typename T>
std::vector<Tensor<T>> fixed_feature_stack(Tape<T>& tape, const Tensor<T>& image) {
    const RenderNetParams<T>& p = fixed_feature_weights<T>();
    std::vector<Tensor<T>> features;
    Tensor<T> x = image;
    for (int s = 0; s < kFixedFeatureStages; ++s) {
        const std::string prefix = "stage" + std::to_string(s);
        x = tape.gated_conv(x, p.at(prefix + ".wf"), p.at(prefix + ".bf"), p.at(prefix + ".wg"),
                            p.at(prefix + ".bg"), 1, 1);
        features.push_back(x);
        x = tape.downsample2x(x);
    }
    return features;
}

template <typename T>
Tensor<T> image_loss(Tape<T>& tape, const Tensor<T>& rendered, const Tensor<T>& target,
                     LossKind kind) {
    if (rendered.shape != target.shape)
        throw std::runtime_error("loss: shape mismatch " + shape_str(rendered.shape) + " vs " +
                                 shape_str(target.shape));
    switch (kind) {
        case LossKind::L1: return tape.mean(tape.abs(tape.sub(rendered, target)));
        case LossKind::MSE: {
            Tensor<T> d = tape.sub(rendered, target);
            return tape.mean(tape.mul(d, d));
        }
        case LossKind::FixedFeature: {
            std::vector<Tensor<T>> fa = fixed_feature_stack(tape, rendered);
            std::vector<Tensor<T>> fb = fixed_feature_stack(tape, target);
            Tensor<T> total = tape.mean(tape.abs(tape.sub(fa[0], fb[0])));
            for (size_t s = 1; s < fa.size(); ++s)
                total = tape.add(total, tape.mean(tape.abs(tape.sub(fa[s], fb[s]))));
            return total;
        }
    }
    throw std::runtime_error("loss: unknown kind");
}

template std::vector<Tensor<float>> fixed_feature_stack(Tape<float>&, const Tensor<float>&);
template std::vector<Tensor<double>> fixed_feature_stack(Tape<double>&, const Tensor<double>&);
template Tensor<float> image_loss(Tape<float>&, const Tensor<float>&, const Tensor<float>&,
                                  LossKind);
template Tensor<double> image_loss(Tape<double>&, const Tensor<double>&, const Tensor<double>&,
                                   LossKind);

// --- optimizer ---

template <typename T>
void adam_step(const std::vector<AdamUpdate<T>>& updates, AdamState<T>& state,
               const FitConfig& config) {
    for (const auto& u : updates) {
        if (!u.param) throw std::runtime_error("adam_step: null parameter");
        if (!u.grad)
            throw std::runtime_error("adam_step: missing gradient for a trainable parameter");
        if (static_cast<int64_t>(u.grad->size()) != u.param->numel())
            throw std::runtime_error("adam_step: gradient size does not match parameter");
        if (u.slot < 0 || u.slot >= static_cast<int64_t>(state.slots.size()))
            throw std::runtime_error("adam_step: slot index out of range");
        AdamSlot<T>& slot = state.slots[u.slot];
        if (slot.m.empty()) {
            slot.m.assign(u.param->numel(), T(0));
            slot.v.assign(u.param->numel(), T(0));
        }
        slot.t += 1;
        const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
        const T eps = static_cast<T>(config.eps), lr = static_cast<T>(u.lr);
        const T c1 = T(1) - std::pow(b1, static_cast<T>(slot.t));
        const T c2 = T(1) - std::pow(b2, static_cast<T>(slot.t));
        T* x = u.param->mutable_data();
        const T* g = u.grad->data();
        for (int64_t i = 0; i < u.param->numel(); ++i) {
            slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g[i];
            slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = slot.m[i] / c1;
            const T vhat = slot.v[i] / c2;
            x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
    state.step += 1;
}

template void adam_step(const std::vector<AdamUpdate<float>>&, AdamState<float>&,
                        const FitConfig&);
template void adam_step(const std::vector<AdamUpdate<double>>&, AdamState<double>&,
                        const FitConfig&);

// --- batching ---

namespace {

float bilinear_sample(const float* plane, int64_t h, int64_t w, double sy, double sx) {
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    const int64_t y0 = static_cast<int64_t>(std::floor(sy)), x0 = static_cast<int64_t>(std::floor(sx));
    const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
    const double v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
    const double v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
    return static_cast<float>((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                              (v10 * (1 - fx) + v11 * fx) * fy);
}

}  // namespace

TrainBatch make_batch(const SceneDataset& scene, const FitConfig& config, Rng& rng) {
    config.validate();
    if (scene.train_indices.empty())
        throw std::runtime_error("make_batch: scene has no training views");
    TrainBatch batch;
    batch.view_index =
        scene.train_indices[rng.uniform_int(static_cast<int64_t>(scene.train_indices.size()))];
    const ViewRecord& view = scene.views[batch.view_index];
    const int64_t w = view.camera.width, h = view.camera.height;
    const int64_t s = config.crop;
    if (s > std::min(w, h))
        throw std::runtime_error("make_batch: crop " + std::to_string(s) +
                                 " exceeds image extents");
    // The zoomed crop reads an s/zoom-sized source region, so zoom may not
    // shrink below s/min(W,H).
    const double zoom_floor =
        std::max(config.zoom_min, static_cast<double>(s) / static_cast<double>(std::min(w, h)));
    batch.zoom = rng.uniform(zoom_floor, std::max(zoom_floor, config.zoom_max));
    const double region_w = static_cast<double>(s) / batch.zoom;
    batch.ox = rng.uniform(0.0, static_cast<double>(w) - region_w);
    batch.oy = rng.uniform(0.0, static_cast<double>(h) - region_w);

    Camera cam = view.camera;
    cam.width = s;
    cam.height = s;
    cam.fx = view.camera.fx * batch.zoom;
    cam.fy = view.camera.fy * batch.zoom;
    cam.cx = batch.zoom * (view.camera.cx + 0.5) - batch.zoom * batch.ox - 0.5;
    cam.cy = batch.zoom * (view.camera.cy + 0.5) - batch.zoom * batch.oy - 0.5;
    batch.camera = cam;

    batch.target = Tensorf::zeros({3, s, s});
    float* dst = batch.target.mutable_data();
    const float* src = view.image.data();
    const int64_t hw_src = h * w, hw_dst = s * s;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < s; ++y)
            for (int64_t x = 0; x < s; ++x) {
                const double sy = batch.oy + (static_cast<double>(y) + 0.5) / batch.zoom - 0.5;
                const double sx = batch.ox + (static_cast<double>(x) + 0.5) / batch.zoom - 0.5;
                dst[c * hw_dst + y * s + x] = bilinear_sample(src + c * hw_src, h, w, sy, sx);
            }
    return batch;
}

// --- training loops ---

namespace {

FitResult run_fit(const std::vector<const SceneDataset*>& scenes, RenderNetParams<float> params,
                  const FitConfig& config) {
    config.validate();
    if (scenes.empty()) throw std::runtime_error("fit: empty scene list");
    const RenderNetConfig& net_cfg = params.config;
    net_cfg.validate();
    if (config.crop % (int64_t(1) << net_cfg.levels) != 0)
        throw std::runtime_error("fit: crop " + std::to_string(config.crop) +
                                 " not divisible by 2^" + std::to_string(net_cfg.levels));
    for (const SceneDataset* scene : scenes) {
        scene->validate();
        if (scene->views.empty() || scene->train_indices.empty())
            throw std::runtime_error("fit: scene has no training views");
        if (scene->cloud.size() == 0) throw std::runtime_error("fit: scene has no points");
        if (config.use_point_colors && !scene->cloud.colors)
            throw std::runtime_error("fit: color-input baseline needs point colors");
    }

    FitResult result;
    result.params = std::move(params);
    result.params.set_requires_grad(true);
    const int64_t m = config.use_point_colors ? 3 : net_cfg.in_channels;
    if (config.use_point_colors && net_cfg.in_channels != 3)
        throw std::runtime_error("fit: color-input baseline needs in_channels == 3");
    for (const SceneDataset* scene : scenes) {
        // Descriptors start at zero; the color baseline freezes point RGB
        // instead and trains only the network.
        Tensorf desc = make_descriptors<float>(scene->cloud.size(), m, !config.use_point_colors);
        if (config.use_point_colors) {
            float* d = desc.mutable_data();
            for (int64_t i = 0; i < scene->cloud.size(); ++i)
                for (int c = 0; c < 3; ++c)
                    d[i * 3 + c] = static_cast<float>((*scene->cloud.colors)[i][c]);
        }
        result.descriptors.push_back(std::move(desc));
    }

    AdamState<float> adam;
    adam.slots.resize(result.params.entries.size() + scenes.size());

    Rng rng(config.seed);
    for (int64_t step = 0; step < config.steps; ++step) {
        try {
            const int64_t k = rng.uniform_int(static_cast<int64_t>(scenes.size()));
            const TrainBatch batch = make_batch(*scenes[k], config, rng);
            Tapef tape;
            std::vector<Tensorf> pyramid =
                rasterize_into_tape(tape, scenes[k]->cloud, result.descriptors[k], batch.camera,
                                    net_cfg.pyramid_levels);
            Tensorf rgb = rendernet_forward(tape, result.params, pyramid);
            Tensorf loss = image_loss(tape, rgb, batch.target, config.loss_kind);
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw std::runtime_error("non-finite loss");
            result.history.push_back(loss_value);
            tape.backward(loss);

            std::vector<AdamUpdate<float>> updates;
            for (size_t e = 0; e < result.params.entries.size(); ++e)
                updates.push_back({&result.params.entries[e].second,
                                   &tape.grad_of(result.params.entries[e].second),
                                   static_cast<int64_t>(e), config.lr_net});
            if (!config.use_point_colors)
                updates.push_back({&result.descriptors[k], &tape.grad_of(result.descriptors[k]),
                                   static_cast<int64_t>(result.params.entries.size() + k),
                                   config.lr_desc});
            adam_step(updates, adam, config);
        } catch (const std::exception& e) {
            throw std::runtime_error("fit: aborted at step " + std::to_string(step) + ": " +
                                     e.what());
        }
    }
    result.params.set_requires_grad(false);
    return result;
}

}  // namespace

FitResult fit(const std::vector<SceneDataset>& scenes, RenderNetParams<float> params,
              const FitConfig& config) {
    std::vector<const SceneDataset*> ptrs;
    for (const auto& s : scenes) ptrs.push_back(&s);
    return run_fit(ptrs, std::move(params), config);
}

FitResult finetune(const SceneDataset& scene, RenderNetParams<float> pretrained,
                   const FitConfig& config) {
    return run_fit({&scene}, std::move(pretrained), config);
}

// --- rendering / evaluation ---

Tensorf render_view(const RenderNetParams<float>& params, const PointCloud& cloud,
                    const Tensorf& descriptors, const Camera& cam, int aa_factor) {
    Tapef tape;
    Tensorf desc = descriptors;
    desc.requires_grad = false;
    std::vector<Tensorf> pyramid =
        rasterize_into_tape(tape, cloud, desc, cam, params.config.pyramid_levels, aa_factor);
    return rendernet_forward(tape, params, pyramid);
}

std::vector<ViewMetrics> evaluate_views(const RenderNetParams<float>& params,
                                        const SceneDataset& scene,
                                        const std::vector<int64_t>& view_indices, int aa_factor) {
    std::vector<ViewMetrics> out;
    for (int64_t v : view_indices) {
        if (v < 0 || v >= static_cast<int64_t>(scene.views.size()))
            throw std::runtime_error("evaluate_views: view index out of range");
        const ViewRecord& view = scene.views[v];
        const Tensorf rendered =
            render_view(params, scene.cloud, scene.descriptors, view.camera, aa_factor);
        out.push_back({v, psnr(rendered, view.image), l1_distance(rendered, view.image)});
    }
    return out;
}

void write_history_csv(const std::string& path, const std::vector<double>& history) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    os << "step,loss\n";
    char buf[64];
    for (size_t i = 0; i < history.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, history[i]);
        os << buf;
    }
}

}  // namespace npbg
