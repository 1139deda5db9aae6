#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npbg/geometry.hpp"
#include "npbg/rasterizer.hpp"
#include "npbg/rng.hpp"
#include "npbg/tensor.hpp"

namespace npbg {

struct ViewRecord {
    Camera camera;
    std::string image_path;  // empty until saved
    Tensorf image;           // [3,H,W] target in [0,1]
};

struct SceneDataset {
    PointCloud cloud;
    Tensorf descriptors;  // [N,M]
    std::vector<ViewRecord> views;
    std::vector<int64_t> train_indices, holdout_indices;

    void validate() const;
};

enum class SynthPreset { Cube, Sphere, TwoPlanes };

SynthPreset preset_from_string(const std::string& s);
std::string to_string(SynthPreset preset);

/// Desk-scale synthetic capture. The cube preset is a closed room interior
/// (cameras inside, every ray terminates on a wall), sphere is an enclosing
/// textured sphere, two-planes is the surface-bleeding testbed: a sparse
/// front plane with a dense plane behind it.
struct SynthSpec {
    SynthPreset preset = SynthPreset::Cube;
    int64_t point_count = 40000;  // budget; presets emit the nearest grid total
    int64_t view_count = 20;
    double orbit_radius = 0.85;
    int64_t width = 128, height = 128;
    double focal = 100.0;         // pixels, at the stated extents
    int64_t density_factor = 10;  // oracle cloud density multiplier
    int64_t holdout_every = 5;    // every k-th view tagged holdout
    double texture_scale = 1.2;   // value-noise base frequency (cycles per unit)
    int64_t descriptor_dim = 8;

    void validate() const;
};

struct SynthResult {
    SceneDataset scene;
    double min_view_coverage = 0.0;  // min over views of the 1x winner-map fill fraction
};

/// Generates points, cameras and ground-truth images. Ground truth comes from
/// an oracle render: the density_factor-times denser colored cloud is
/// z-buffer rasterized at 4x resolution and averaged down over the covered
/// subpixels of each target pixel. Fully deterministic from (spec, seed).
SynthResult generate_synthetic(const SynthSpec& spec, uint64_t seed);

/// Camera sampling box used by the two-planes bleeding experiments: eye
/// inside it, looking at a jittered point near the origin. The preset's back
/// plane is dense enough to cover every pixel of any such camera.
struct TwoPlanesCameraBox {
    double x_range = 0.4, z_min = -3.0, z_max = -2.2, target_jitter = 0.15;
};
Camera sample_two_planes_camera(const TwoPlanesCameraBox& box, int64_t width, int64_t height,
                                double focal, Rng& rng);

/// Scene directory layout: points.ply, cameras.json, images/view_####.png,
/// split.json, descriptors.npbd (optional).
SceneDataset load_scene(const std::string& dir);
void save_scene(const std::string& dir, const SceneDataset& scene);

double psnr(const Tensorf& a, const Tensorf& b);
double l1_distance(const Tensorf& a, const Tensorf& b);

/// Union of a and b with b's cloud rigidly transformed; descriptor rows are
/// concatenated (a's first), views and split inherited from a.
SceneDataset compose_scenes(const SceneDataset& a, const SceneDataset& b,
                            const RigidTransform& transform);

/// Quantizes to the 8-bit grid used on disk (round(v*255)/255, clamped).
Tensorf quantize_u8(const Tensorf& image);

/// 3-octave value noise color, deterministic in (position, seed); components
/// land on the 8-bit grid so images and clouds round-trip exactly.
Eigen::Vector3d texture_color(const Eigen::Vector3d& p, double base_frequency, uint64_t seed);

}  // namespace npbg
