#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "npbg/rendernet.hpp"
#include "npbg/rng.hpp"
#include "npbg/sceneio.hpp"
#include "npbg/tape.hpp"
#include "npbg/tensor.hpp"

namespace npbg {

enum class LossKind { L1, MSE, FixedFeature };

LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind kind);

struct FitConfig {
    double lr_net = 1e-4;
    double lr_desc = 1e-1;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t steps = 2000;
    int64_t crop = 64;
    double zoom_min = 0.5, zoom_max = 2.0;
    LossKind loss_kind = LossKind::L1;
    uint64_t seed = 0;
    bool use_point_colors = false;  // ablation: rasterize stored point RGB, descriptors frozen

    void validate() const {
        if (!(lr_net >= 0) || !(lr_desc >= 0))
            throw std::runtime_error("FitConfig: learning rates must be non-negative");
        if (!(zoom_min > 0) || !(zoom_max >= zoom_min))
            throw std::runtime_error("FitConfig: invalid zoom range");
        if (crop < 1) throw std::runtime_error("FitConfig: crop must be positive");
        if (steps < 0) throw std::runtime_error("FitConfig: steps must be >= 0");
    }
};

// --- loss ---

/// Mismatch between a rendered and a target [3,H,W] image. FixedFeature runs
/// both images through a frozen, seeded 3-stage gated-conv stack and sums the
/// L1 distances between the per-stage feature maps; its weights never train.
template <typename T>
Tensor<T> image_loss(Tape<T>& tape, const Tensor<T>& rendered, const Tensor<T>& target,
                     LossKind kind);

/// The frozen feature stack behind LossKind::FixedFeature: stage s applies a
/// gated conv (3x3, stride 1, pad 1) and a 2x box downsample. Exposed for the
/// compositional oracle in the tests.
template <typename T>
std::vector<Tensor<T>> fixed_feature_stack(Tape<T>& tape, const Tensor<T>& image);

/// The frozen stack's weights ("stage0".."stage2" gated-conv entries); never
/// trained.
template <typename T>
const RenderNetParams<T>& fixed_feature_weights();

// --- optimizer ---

template <typename T>
struct AdamSlot {
    std::vector<T> m, v;
    int64_t t = 0;  // per-parameter update count for bias correction
};

template <typename T>
struct AdamState {
    std::vector<AdamSlot<T>> slots;
    int64_t step = 0;  // adam_step invocations
};

template <typename T>
struct AdamUpdate {
    Tensor<T>* param = nullptr;
    const std::vector<T>* grad = nullptr;
    int64_t slot = 0;
    double lr = 0.0;
};

/// Standard ADAM with bias correction; one slot per parameter tensor. Throws
/// on a missing gradient or a shape mismatch.
template <typename T>
void adam_step(const std::vector<AdamUpdate<T>>& updates, AdamState<T>& state,
               const FitConfig& config);

// --- batching ---

struct TrainBatch {
    Camera camera;   // crop-and-zoom adjusted, extents crop x crop
    Tensorf target;  // [3,crop,crop] ground-truth crop
    int64_t view_index = 0;
    double zoom = 1.0, ox = 0.0, oy = 0.0;
};

/// Samples a training view, a zoom factor and a crop window; returns the
/// adjusted camera plus the bilinearly resampled ground-truth crop.
TrainBatch make_batch(const SceneDataset& scene, const FitConfig& config, Rng& rng);

// --- training loops ---

struct FitResult {
    RenderNetParams<float> params;
    std::vector<Tensorf> descriptors;  // one per scene, [N,M]
    std::vector<double> history;       // loss per step
};

/// Joint optimization of the rendering network and per-scene descriptor sets:
/// each step samples a scene uniformly, renders a random crop through the
/// pyramid and the network, and applies one ADAM step to theta and that
/// scene's descriptors. Descriptors start at zero.
FitResult fit(const std::vector<SceneDataset>& scenes, RenderNetParams<float> params,
              const FitConfig& config);

/// Single-scene fit starting from pretrained weights; both theta and the new
/// scene's zero-initialized descriptors train.
FitResult finetune(const SceneDataset& scene, RenderNetParams<float> pretrained,
                   const FitConfig& config);

// --- rendering / evaluation ---

/// Full-frame render of one view: descriptor pyramid (optionally
/// supersampled) followed by the network.
Tensorf render_view(const RenderNetParams<float>& params, const PointCloud& cloud,
                    const Tensorf& descriptors, const Camera& cam, int aa_factor = 1);

struct ViewMetrics {
    int64_t view = 0;
    double psnr = 0.0, l1 = 0.0;
};

/// Renders and scores the given views against their stored target images.
std::vector<ViewMetrics> evaluate_views(const RenderNetParams<float>& params,
                                        const SceneDataset& scene,
                                        const std::vector<int64_t>& view_indices,
                                        int aa_factor = 1);

void write_history_csv(const std::string& path, const std::vector<double>& history);

}  // namespace npbg
