#include "npbg/sceneio.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "npbg/checkpoint.hpp"
#include "npbg/image_io.hpp"

namespace fs = std::filesystem;

namespace npbg {

// --- dataset validation ---

void SceneDataset::validate() const {
    cloud.validate();
    if (descriptors.rank() != 2 || descriptors.shape[0] != cloud.size())
        throw std::runtime_error("SceneDataset: descriptor rows do not match point count");
    for (size_t v = 0; v < views.size(); ++v) {
        views[v].camera.validate();
        const auto& img = views[v].image;
        if (img.rank() != 3 || img.shape[0] != 3 || img.shape[1] != views[v].camera.height ||
            img.shape[2] != views[v].camera.width)
            throw std::runtime_error("SceneDataset: extent mismatch between view " +
                                     std::to_string(v) + " image " + shape_str(img.shape) +
                                     " and camera " + std::to_string(views[v].camera.width) + "x" +
                                     std::to_string(views[v].camera.height));
    }
    std::set<int64_t> train(train_indices.begin(), train_indices.end());
    for (int64_t h : holdout_indices)
        if (train.count(h))
            throw std::runtime_error("SceneDataset: view " + std::to_string(h) +
                                     " is in both train and holdout splits");
    for (int64_t i : train_indices)
        if (i < 0 || i >= static_cast<int64_t>(views.size()))
            throw std::runtime_error("SceneDataset: train index out of range");
    for (int64_t i : holdout_indices)
        if (i < 0 || i >= static_cast<int64_t>(views.size()))
            throw std::runtime_error("SceneDataset: holdout index out of range");
}

// --- procedural texture ---

namespace {

double lattice_value(int64_t ix, int64_t iy, int64_t iz, uint64_t salt) {
    uint64_t h = salt;
    h = splitmix64(h ^ (static_cast<uint64_t>(ix) * 0x9e3779b97f4a7c15ull));
    h = splitmix64(h ^ (static_cast<uint64_t>(iy) * 0xc2b2ae3d27d4eb4full));
    h = splitmix64(h ^ (static_cast<uint64_t>(iz) * 0x165667b19e3779f9ull));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise3(const Eigen::Vector3d& p, uint64_t salt) {
    const int64_t ix = static_cast<int64_t>(std::floor(p.x()));
    const int64_t iy = static_cast<int64_t>(std::floor(p.y()));
    const int64_t iz = static_cast<int64_t>(std::floor(p.z()));
    const double tx = fade(p.x() - static_cast<double>(ix));
    const double ty = fade(p.y() - static_cast<double>(iy));
    const double tz = fade(p.z() - static_cast<double>(iz));
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
                acc += w * lattice_value(ix + dx, iy + dy, iz + dz, salt);
            }
    return acc;
}

double quantize_channel(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<double>(std::lround(v * 255.0)) / 255.0;
}

}  // namespace

Eigen::Vector3d texture_color(const Eigen::Vector3d& p, double base_frequency, uint64_t seed) {
    Eigen::Vector3d rgb;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0, norm = 0.0;
        for (int octave = 0; octave < 3; ++octave) {
            const double amp = 1.0 / static_cast<double>(1 << octave);
            const double freq = base_frequency * static_cast<double>(1 << octave);
            const uint64_t salt = splitmix64(seed ^ (static_cast<uint64_t>(c) * 17 + octave + 1));
            acc += amp * value_noise3(p * freq, salt);
            norm += amp;
        }
        rgb[c] = quantize_channel(acc / norm);
    }
    return rgb;
}

Tensorf quantize_u8(const Tensorf& image) {
    Tensorf out = Tensorf::zeros(image.shape);
    const float* src = image.data();
    float* dst = out.mutable_data();
    for (int64_t i = 0; i < image.numel(); ++i) {
        float v = std::clamp(src[i], 0.0f, 1.0f);
        dst[i] = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
    }
    return out;
}

// --- synthetic presets ---

void SynthSpec::validate() const {
    if (point_count < 1) throw std::runtime_error("SynthSpec: point_count must be >= 1");
    if (view_count < 1) throw std::runtime_error("SynthSpec: view_count must be >= 1");
    if (width < 2 || height < 2) throw std::runtime_error("SynthSpec: extents must be >= 2");
    if (!(focal > 0)) throw std::runtime_error("SynthSpec: focal must be positive");
    if (density_factor < 1) throw std::runtime_error("SynthSpec: density_factor must be >= 1");
    if (descriptor_dim < 1) throw std::runtime_error("SynthSpec: descriptor_dim must be >= 1");
    if (!(orbit_radius > 0)) throw std::runtime_error("SynthSpec: orbit_radius must be positive");
}

SynthPreset preset_from_string(const std::string& s) {
    if (s == "cube") return SynthPreset::Cube;
    if (s == "sphere") return SynthPreset::Sphere;
    if (s == "two-planes") return SynthPreset::TwoPlanes;
    throw std::runtime_error("unknown preset '" + s + "' (expected cube|sphere|two-planes)");
}

std::string to_string(SynthPreset preset) {
    switch (preset) {
        case SynthPreset::Cube: return "cube";
        case SynthPreset::Sphere: return "sphere";
        case SynthPreset::TwoPlanes: return "two-planes";
    }
    return "?";
}

namespace {

constexpr double kRoomHalf = 1.0;       // cube room interior [-1,1]^3
constexpr double kSphereRadius = 1.6;   // enclosing sphere
constexpr double kFrontSpan = 3.4;      // two-planes: front plane half-extent at z=0
constexpr double kBackSpan = 6.0;       // two-planes: back plane half-extent at z=1
constexpr double kBackZ = 1.0;

// Jittered grid over the six inward faces of the cube room.
void sample_cube_room(int64_t budget, uint64_t jitter_salt, std::vector<Eigen::Vector3d>& out) {
    const int64_t per_face = std::max<int64_t>(1, budget / 6);
    const int64_t g = std::max<int64_t>(1, static_cast<int64_t>(std::llround(
                                               std::sqrt(static_cast<double>(per_face)))));
    Rng rng(jitter_salt);
    for (int face = 0; face < 6; ++face) {
        const int axis = face / 2;
        const double sign = (face % 2 == 0) ? 1.0 : -1.0;
        for (int64_t i = 0; i < g; ++i)
            for (int64_t j = 0; j < g; ++j) {
                const double u =
                    -kRoomHalf + 2.0 * kRoomHalf * ((static_cast<double>(i) + rng.uniform()) /
                                                    static_cast<double>(g));
                const double v =
                    -kRoomHalf + 2.0 * kRoomHalf * ((static_cast<double>(j) + rng.uniform()) /
                                                    static_cast<double>(g));
                Eigen::Vector3d p;
                p[axis] = sign * kRoomHalf;
                p[(axis + 1) % 3] = u;
                p[(axis + 2) % 3] = v;
                out.push_back(p);
            }
    }
}

// Fibonacci lattice on the enclosing sphere.
void sample_sphere(int64_t budget, std::vector<Eigen::Vector3d>& out) {
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int64_t i = 0; i < budget; ++i) {
        const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(budget);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * static_cast<double>(i);
        out.emplace_back(kSphereRadius * r * std::cos(phi), kSphereRadius * r * std::sin(phi),
                         kSphereRadius * z);
    }
}

// Front plane: regular grid sized by the point budget (sparse, hole-prone at
// full resolution). Back plane: regular grid dense enough to cover every
// pixel of any camera from the documented sampling box.
void sample_two_planes(int64_t budget, double focal, std::vector<Eigen::Vector3d>& out) {
    const int64_t gf = std::max<int64_t>(2, static_cast<int64_t>(std::llround(
                                                std::sqrt(static_cast<double>(budget)))));
    for (int64_t i = 0; i < gf; ++i)
        for (int64_t j = 0; j < gf; ++j)
            out.emplace_back(-kFrontSpan + 2.0 * kFrontSpan * static_cast<double>(i) /
                                              static_cast<double>(gf - 1),
                             -kFrontSpan + 2.0 * kFrontSpan * static_cast<double>(j) /
                                              static_cast<double>(gf - 1),
                             0.0);
    const double spacing = 1.55 / focal;  // ~0.45 px at the nearest back-plane depth
    const int64_t gb = static_cast<int64_t>(std::ceil(2.0 * kBackSpan / spacing)) + 1;
    for (int64_t i = 0; i < gb; ++i)
        for (int64_t j = 0; j < gb; ++j)
            out.emplace_back(-kBackSpan + 2.0 * kBackSpan * static_cast<double>(i) /
                                             static_cast<double>(gb - 1),
                             -kBackSpan + 2.0 * kBackSpan * static_cast<double>(j) /
                                             static_cast<double>(gb - 1),
                             kBackZ);
}

PointCloud build_cloud(const SynthSpec& spec, int64_t budget, uint64_t seed) {
    PointCloud cloud;
    switch (spec.preset) {
        case SynthPreset::Cube:
            sample_cube_room(budget, splitmix64(seed ^ 0xc0ffee), cloud.positions);
            break;
        case SynthPreset::Sphere: sample_sphere(budget, cloud.positions); break;
        case SynthPreset::TwoPlanes:
            sample_two_planes(budget, spec.focal, cloud.positions);
            break;
    }
    cloud.colors.emplace();
    cloud.colors->reserve(cloud.positions.size());
    const uint64_t tex_seed = splitmix64(seed ^ 0x7e47);
    for (const auto& p : cloud.positions)
        cloud.colors->push_back(texture_color(p, spec.texture_scale, tex_seed));
    return cloud;
}

std::vector<Camera> orbit_cameras(const SynthSpec& spec, const Eigen::Vector3d& centroid,
                                  uint64_t seed) {
    std::vector<Camera> cams;
    Rng rng(splitmix64(seed ^ 0xcafe));
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int64_t v = 0; v < spec.view_count; ++v) {
        const double az = 2.0 * M_PI * static_cast<double>(v) / static_cast<double>(spec.view_count);
        const double el =
            0.35 * std::sin(2.0 * M_PI * 2.0 * static_cast<double>(v) /
                                static_cast<double>(spec.view_count) +
                            phase);
        Eigen::Vector3d eye = centroid + spec.orbit_radius *
                                             Eigen::Vector3d(std::cos(az) * std::cos(el),
                                                             std::sin(az) * std::cos(el),
                                                             std::sin(el));
        Camera cam;
        cam.width = spec.width;
        cam.height = spec.height;
        cam.fx = spec.focal;
        cam.fy = spec.focal;
        cam.cx = (static_cast<double>(spec.width) - 1.0) / 2.0;
        cam.cy = (static_cast<double>(spec.height) - 1.0) / 2.0;
        cam.R = look_at_rotation(eye, centroid, Eigen::Vector3d(0, 0, 1));
        cam.t = -cam.R * eye;
        cams.push_back(cam);
    }
    return cams;
}

Tensorf colors_as_descriptors(const PointCloud& cloud) {
    if (!cloud.colors) throw std::runtime_error("synthetic cloud is missing colors");
    Tensorf desc = Tensorf::zeros({cloud.size(), 3});
    float* d = desc.mutable_data();
    for (int64_t i = 0; i < cloud.size(); ++i)
        for (int c = 0; c < 3; ++c) d[i * 3 + c] = static_cast<float>((*cloud.colors)[i][c]);
    return desc;
}

// 4x supersampled oracle render averaged over the covered subpixels of each
// target pixel; uncovered target pixels stay black.
Tensorf oracle_render(const PointCloud& oracle_cloud, const Tensorf& color_desc,
                      const Camera& cam) {
    const Camera hi = camera_double(camera_double(cam));
    const RawImage<float> img = rasterize(oracle_cloud, color_desc, hi);
    Tensorf out = Tensorf::zeros({3, cam.height, cam.width});
    float* dst = out.mutable_data();
    const int64_t hw_lo = cam.height * cam.width, hw_hi = hi.height * hi.width;
    for (int64_t ty = 0; ty < cam.height; ++ty)
        for (int64_t tx = 0; tx < cam.width; ++tx) {
            double sum[3] = {0, 0, 0};
            int covered = 0;
            for (int64_t sy = 4 * ty; sy < 4 * ty + 4; ++sy)
                for (int64_t sx = 4 * tx; sx < 4 * tx + 4; ++sx) {
                    const int64_t px = sy * hi.width + sx;
                    if (img.winner[px] == kNoWinner) continue;
                    ++covered;
                    for (int c = 0; c < 3; ++c) sum[c] += img.values[c * hw_hi + px];
                }
            if (covered == 0) continue;
            for (int c = 0; c < 3; ++c)
                dst[c * hw_lo + ty * cam.width + tx] =
                    static_cast<float>(sum[c] / static_cast<double>(covered));
        }
    return out;
}

double view_coverage(const PointCloud& oracle_cloud, const Tensorf& color_desc,
                     const Camera& cam) {
    const RawImage<float> img = rasterize(oracle_cloud, color_desc, cam);
    int64_t covered = 0;
    for (int64_t w : img.winner) covered += (w != kNoWinner) ? 1 : 0;
    return static_cast<double>(covered) / static_cast<double>(img.winner.size());
}

}  // namespace

Camera sample_two_planes_camera(const TwoPlanesCameraBox& box, int64_t width, int64_t height,
                                double focal, Rng& rng) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = focal;
    cam.fy = focal;
    cam.cx = (static_cast<double>(width) - 1.0) / 2.0;
    cam.cy = (static_cast<double>(height) - 1.0) / 2.0;
    const Eigen::Vector3d eye(rng.uniform(-box.x_range, box.x_range),
                              rng.uniform(-box.x_range, box.x_range),
                              rng.uniform(box.z_min, box.z_max));
    const Eigen::Vector3d target(rng.uniform(-box.target_jitter, box.target_jitter),
                                 rng.uniform(-box.target_jitter, box.target_jitter), 0.0);
    cam.R = look_at_rotation(eye, target, Eigen::Vector3d(0, 1, 0));
    cam.t = -cam.R * eye;
    return cam;
}

SynthResult generate_synthetic(const SynthSpec& spec, uint64_t seed) {
    spec.validate();
    SynthResult result;
    SceneDataset& scene = result.scene;
    scene.cloud = build_cloud(spec, spec.point_count, seed);
    const PointCloud oracle_cloud =
        build_cloud(spec, spec.point_count * spec.density_factor, splitmix64(seed ^ 0x0bac1e));
    const Tensorf oracle_colors = colors_as_descriptors(oracle_cloud);

    std::vector<Camera> cams;
    if (spec.preset == SynthPreset::TwoPlanes) {
        Rng rng(splitmix64(seed ^ 0xcafe));
        TwoPlanesCameraBox box;
        for (int64_t v = 0; v < spec.view_count; ++v)
            cams.push_back(sample_two_planes_camera(box, spec.width, spec.height, spec.focal, rng));
    } else {
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (const auto& p : scene.cloud.positions) centroid += p;
        centroid /= static_cast<double>(scene.cloud.size());
        cams = orbit_cameras(spec, centroid, seed);
    }

    result.min_view_coverage = 1.0;
    for (int64_t v = 0; v < spec.view_count; ++v) {
        ViewRecord rec;
        rec.camera = cams[v];
        rec.image = quantize_u8(oracle_render(oracle_cloud, oracle_colors, cams[v]));
        scene.views.push_back(std::move(rec));
        result.min_view_coverage =
            std::min(result.min_view_coverage, view_coverage(oracle_cloud, oracle_colors, cams[v]));
        if (spec.holdout_every > 0 && (v % spec.holdout_every) == spec.holdout_every - 1)
            scene.holdout_indices.push_back(v);
        else
            scene.train_indices.push_back(v);
    }
    scene.descriptors = make_descriptors<float>(scene.cloud.size(), spec.descriptor_dim, false);
    scene.validate();
    return result;
}

// --- metrics ---

double psnr(const Tensorf& a, const Tensorf& b) {
    if (a.shape != b.shape)
        throw std::runtime_error("psnr: shape mismatch " + shape_str(a.shape) + " vs " +
                                 shape_str(b.shape));
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double l1_distance(const Tensorf& a, const Tensorf& b) {
    if (a.shape != b.shape)
        throw std::runtime_error("l1: shape mismatch " + shape_str(a.shape) + " vs " +
                                 shape_str(b.shape));
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        acc += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
    return acc / static_cast<double>(a.numel());
}

// --- composition ---

SceneDataset compose_scenes(const SceneDataset& a, const SceneDataset& b,
                            const RigidTransform& transform) {
    if (a.descriptors.shape[1] != b.descriptors.shape[1])
        throw std::runtime_error("compose_scenes: descriptor widths differ, " +
                                 std::to_string(a.descriptors.shape[1]) + " vs " +
                                 std::to_string(b.descriptors.shape[1]));
    SceneDataset out;
    out.cloud = a.cloud;
    const PointCloud moved = apply_transform(b.cloud, transform);
    out.cloud.positions.insert(out.cloud.positions.end(), moved.positions.begin(),
                               moved.positions.end());
    if (a.cloud.colors && moved.colors) {
        out.cloud.colors->insert(out.cloud.colors->end(), moved.colors->begin(),
                                 moved.colors->end());
    } else {
        out.cloud.colors.reset();
    }
    const int64_t m = a.descriptors.shape[1];
    out.descriptors = Tensorf::zeros({a.descriptors.shape[0] + b.descriptors.shape[0], m});
    std::copy(a.descriptors.data(), a.descriptors.data() + a.descriptors.numel(),
              out.descriptors.mutable_data());
    std::copy(b.descriptors.data(), b.descriptors.data() + b.descriptors.numel(),
              out.descriptors.mutable_data() + a.descriptors.numel());
    out.views = a.views;
    out.train_indices = a.train_indices;
    out.holdout_indices = a.holdout_indices;
    return out;
}

// --- PLY ---

namespace {

void write_ply(const std::string& path, const PointCloud& cloud) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_scene: cannot write '" + path + "'");
    const bool colors = cloud.colors.has_value();
    os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    if (colors) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    os << "end_header\n";
    char buf[128];
    for (int64_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.positions[i];
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", p.x(), p.y(), p.z());
        os << buf;
        if (colors) {
            const auto& c = (*cloud.colors)[i];
            os << ' ' << std::lround(c.x() * 255.0) << ' ' << std::lround(c.y() * 255.0) << ' '
               << std::lround(c.z() * 255.0);
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("save_scene: write failed for '" + path + "'");
}

PointCloud read_ply(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_scene: missing file '" + path + "'");
    std::string line;
    if (!std::getline(is, line) || line != "ply")
        throw std::runtime_error("malformed PLY '" + path + "': missing 'ply' magic");
    int64_t vertex_count = -1;
    std::vector<std::string> props;
    bool in_vertex_element = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "end_header") break;
        if (tok == "comment") continue;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii")
                throw std::runtime_error("malformed PLY '" + path + "': only ascii supported");
        } else if (tok == "element") {
            std::string name;
            ls >> name;
            in_vertex_element = (name == "vertex");
            if (in_vertex_element) ls >> vertex_count;
        } else if (tok == "property" && in_vertex_element) {
            std::string type, name;
            ls >> type >> name;
            props.push_back(name);
        }
    }
    if (vertex_count < 0)
        throw std::runtime_error("malformed PLY '" + path + "': no vertex element");
    auto index_of = [&](const char* name) {
        for (size_t i = 0; i < props.size(); ++i)
            if (props[i] == name) return static_cast<int64_t>(i);
        return static_cast<int64_t>(-1);
    };
    const int64_t ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
    if (ix < 0 || iy < 0 || iz < 0)
        throw std::runtime_error("malformed PLY '" + path + "': missing x/y/z properties");
    const int64_t ir = index_of("red"), ig = index_of("green"), ib = index_of("blue");
    const bool colors = ir >= 0 && ig >= 0 && ib >= 0;
    PointCloud cloud;
    cloud.positions.reserve(vertex_count);
    if (colors) cloud.colors.emplace();
    std::vector<double> vals(props.size());
    for (int64_t v = 0; v < vertex_count; ++v) {
        if (!std::getline(is, line))
            throw std::runtime_error("malformed PLY '" + path + "': truncated vertex list");
        std::istringstream ls(line);
        for (size_t c = 0; c < props.size(); ++c)
            if (!(ls >> vals[c]))
                throw std::runtime_error("malformed PLY '" + path + "': bad vertex line " +
                                         std::to_string(v));
        cloud.positions.emplace_back(vals[ix], vals[iy], vals[iz]);
        if (colors)
            cloud.colors->emplace_back(vals[ir] / 255.0, vals[ig] / 255.0, vals[ib] / 255.0);
    }
    return cloud;
}

nlohmann::json camera_to_json(const Camera& cam) {
    nlohmann::json j;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) r[i * 3 + k] = cam.R(i, k);
    j["R"] = r;
    j["t"] = std::vector<double>{cam.t.x(), cam.t.y(), cam.t.z()};
    return j;
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera cam;
    cam.width = j.at("width").get<int64_t>();
    cam.height = j.at("height").get<int64_t>();
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const auto r = j.at("R").get<std::vector<double>>();
    if (r.size() != 9) throw std::runtime_error("cameras.json: R must have 9 entries");
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) cam.R(i, k) = r[i * 3 + k];
    const auto t = j.at("t").get<std::vector<double>>();
    if (t.size() != 3) throw std::runtime_error("cameras.json: t must have 3 entries");
    cam.t = Eigen::Vector3d(t[0], t[1], t[2]);
    cam.validate();
    return cam;
}

}  // namespace

void save_scene(const std::string& dir, const SceneDataset& scene) {
    scene.validate();
    fs::create_directories(fs::path(dir) / "images");
    write_ply((fs::path(dir) / "points.ply").string(), scene.cloud);

    nlohmann::json cams = nlohmann::json::array();
    for (size_t v = 0; v < scene.views.size(); ++v) {
        char name[64];
        std::snprintf(name, sizeof name, "images/view_%04zu.png", v);
        save_png((fs::path(dir) / name).string(), scene.views[v].image);
        cams.push_back({{"image", name}, {"camera", camera_to_json(scene.views[v].camera)}});
    }
    std::ofstream cam_os(fs::path(dir) / "cameras.json");
    cam_os << cams.dump(2) << "\n";

    nlohmann::json split;
    split["train"] = scene.train_indices;
    split["holdout"] = scene.holdout_indices;
    std::ofstream split_os(fs::path(dir) / "split.json");
    split_os << split.dump(2) << "\n";

    save_descriptors((fs::path(dir) / "descriptors.npbd").string(), scene.descriptors);
}

SceneDataset load_scene(const std::string& dir) {
    SceneDataset scene;
    const fs::path root(dir);
    if (!fs::exists(root / "points.ply"))
        throw std::runtime_error("load_scene: missing file '" + (root / "points.ply").string() +
                                 "'");
    scene.cloud = read_ply((root / "points.ply").string());

    std::ifstream cam_is(root / "cameras.json");
    if (!cam_is)
        throw std::runtime_error("load_scene: missing file '" + (root / "cameras.json").string() +
                                 "'");
    nlohmann::json cams;
    try {
        cam_is >> cams;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_scene: malformed cameras.json: " + std::string(e.what()));
    }
    for (const auto& entry : cams) {
        ViewRecord rec;
        rec.camera = camera_from_json(entry.at("camera"));
        rec.image_path = entry.at("image").get<std::string>();
        rec.image = load_png((root / rec.image_path).string());
        scene.views.push_back(std::move(rec));
    }

    std::ifstream split_is(root / "split.json");
    if (!split_is)
        throw std::runtime_error("load_scene: missing file '" + (root / "split.json").string() +
                                 "'");
    nlohmann::json split;
    try {
        split_is >> split;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_scene: malformed split.json: " + std::string(e.what()));
    }
    scene.train_indices = split.at("train").get<std::vector<int64_t>>();
    scene.holdout_indices = split.at("holdout").get<std::vector<int64_t>>();

    const fs::path desc_path = root / "descriptors.npbd";
    if (fs::exists(desc_path))
        scene.descriptors = load_descriptors(desc_path.string());
    else
        scene.descriptors = make_descriptors<float>(scene.cloud.size(), 8, false);

    scene.validate();
    return scene;
}

}  // namespace npbg
