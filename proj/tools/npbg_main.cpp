#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "npbg/checkpoint.hpp"
#include "npbg/fitting.hpp"
#include "npbg/image_io.hpp"
#include "npbg/sceneio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SynthArgs {
    std::string preset = "cube";
    npbg::SynthSpec spec;
    uint64_t seed = 0;
    std::string out;
};

struct FitArgs {
    std::vector<std::string> scene_dirs;
    std::string out;
    std::string ckpt;  // optional warm start (finetune reuses this struct)
    npbg::FitConfig config;
    std::string loss = "l1";
    npbg::RenderNetConfig net;
    uint64_t net_seed = 0;
    int64_t checkpoint_every = 0;
};

struct RenderArgs {
    std::string ckpt, scene_dir, out;
    std::string camera_file;  // JSON camera list; exclusive with orbit
    bool orbit = false;
    double orbit_radius = 0.85, orbit_elevation = 0.0;
    std::vector<double> orbit_center = {0, 0, 0};
    int64_t orbit_frames = 8;
    int aa = 1;
};

json fit_config_json(const npbg::FitConfig& c) {
    return json{{"lr_net", c.lr_net},
                {"lr_desc", c.lr_desc},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps", c.eps},
                {"steps", c.steps},
                {"crop", c.crop},
                {"zoom_min", c.zoom_min},
                {"zoom_max", c.zoom_max},
                {"loss", npbg::to_string(c.loss_kind)},
                {"seed", c.seed},
                {"input", c.use_point_colors ? "colors" : "descriptors"}};
}

json net_config_json(const npbg::RenderNetConfig& c) {
    return json{{"levels", c.levels},
                {"in_channels", c.in_channels},
                {"base_channels", c.base_channels},
                {"pyramid_levels", c.pyramid_levels}};
}

void write_resolved_config(const std::string& out_dir, const std::string& command, json extra) {
    extra["command"] = command;
    std::ofstream os(fs::path(out_dir) / "resolved_config.json");
    os << extra.dump(2) << "\n";
}

void add_fit_flags(CLI::App* cmd, FitArgs& args) {
    cmd->add_option("--out", args.out, "Output directory")->required();
    cmd->add_option("--lr-net", args.config.lr_net, "Network learning rate");
    cmd->add_option("--lr-desc", args.config.lr_desc, "Descriptor learning rate");
    cmd->add_option("--beta1", args.config.beta1, "ADAM beta1");
    cmd->add_option("--beta2", args.config.beta2, "ADAM beta2");
    cmd->add_option("--eps", args.config.eps, "ADAM epsilon");
    cmd->add_option("--steps", args.config.steps, "Training steps");
    cmd->add_option("--crop", args.config.crop, "Square crop size");
    cmd->add_option("--zoom-min", args.config.zoom_min, "Zoom lower bound");
    cmd->add_option("--zoom-max", args.config.zoom_max, "Zoom upper bound");
    cmd->add_option("--loss", args.loss, "Loss kind: l1|mse|fixed-feature");
    cmd->add_option("--seed", args.config.seed, "Training seed");
    cmd->add_flag("--color-input", args.config.use_point_colors,
                  "Rasterize stored point colors instead of descriptors");
    cmd->add_option("--checkpoint-every", args.checkpoint_every,
                    "Write intermediate checkpoints every N steps (0 = only final)");
}

void save_fit_outputs(const std::string& out_dir, const npbg::FitResult& result,
                      const std::vector<std::string>& scene_dirs) {
    fs::create_directories(out_dir);
    npbg::save_rendernet((fs::path(out_dir) / "model.npbgckpt").string(), result.params);
    for (size_t k = 0; k < result.descriptors.size(); ++k) {
        char name[64];
        std::snprintf(name, sizeof name, "descriptors_%02zu.npbd", k);
        npbg::save_descriptors((fs::path(out_dir) / name).string(), result.descriptors[k]);
    }
    npbg::write_history_csv((fs::path(out_dir) / "loss.csv").string(), result.history);
    json scenes = json::array();
    for (const auto& d : scene_dirs) scenes.push_back(d);
    std::ofstream os(fs::path(out_dir) / "scenes.json");
    os << scenes.dump(2) << "\n";
}

int cmd_synth(const SynthArgs& args) {
    npbg::SynthSpec spec = args.spec;
    spec.preset = npbg::preset_from_string(args.preset);
    npbg::SynthResult result = npbg::generate_synthetic(spec, args.seed);
    fs::create_directories(args.out);
    npbg::save_scene(args.out, result.scene);
    write_resolved_config(args.out, "synth",
                          json{{"preset", args.preset},
                               {"points", spec.point_count},
                               {"views", spec.view_count},
                               {"width", spec.width},
                               {"height", spec.height},
                               {"focal", spec.focal},
                               {"orbit_radius", spec.orbit_radius},
                               {"density_factor", spec.density_factor},
                               {"holdout_every", spec.holdout_every},
                               {"texture_scale", spec.texture_scale},
                               {"descriptor_dim", spec.descriptor_dim},
                               {"seed", args.seed},
                               {"min_view_coverage", result.min_view_coverage}});
    std::printf("synth: %lld points, %zu views -> %s (coverage %.4f)\n",
                static_cast<long long>(result.scene.cloud.size()), result.scene.views.size(),
                args.out.c_str(), result.min_view_coverage);
    return 0;
}

int cmd_fit(FitArgs& args, bool is_finetune) {
    args.config.loss_kind = npbg::loss_kind_from_string(args.loss);
    std::vector<npbg::SceneDataset> scenes;
    for (const auto& dir : args.scene_dirs) scenes.push_back(npbg::load_scene(dir));

    npbg::RenderNetParams<float> params;
    if (is_finetune || !args.ckpt.empty()) {
        if (args.ckpt.empty()) throw std::runtime_error("finetune: --ckpt is required");
        params = npbg::load_rendernet(args.ckpt);
    } else {
        if (args.config.use_point_colors) args.net.in_channels = 3;
        params = npbg::build_rendernet<float>(args.net, args.net_seed);
    }
    std::printf("%s: %lld parameters, %zu scene(s), %lld steps\n",
                is_finetune ? "finetune" : "fit",
                static_cast<long long>(params.parameter_count()), scenes.size(),
                static_cast<long long>(args.config.steps));

    npbg::FitResult result = npbg::fit(scenes, std::move(params), args.config);
    save_fit_outputs(args.out, result, args.scene_dirs);
    json cfg = fit_config_json(args.config);
    cfg["net"] = net_config_json(result.params.config);
    cfg["scenes"] = args.scene_dirs;
    if (!args.ckpt.empty()) cfg["ckpt"] = args.ckpt;
    write_resolved_config(args.out, is_finetune ? "finetune" : "fit", cfg);
    std::printf("%s: final loss %.6f -> %s\n", is_finetune ? "finetune" : "fit",
                result.history.empty() ? 0.0 : result.history.back(), args.out.c_str());
    return 0;
}

std::vector<npbg::Camera> orbit_path(const RenderArgs& args, int64_t width, int64_t height,
                                     double fx, double fy) {
    std::vector<npbg::Camera> cams;
    const Eigen::Vector3d center(args.orbit_center[0], args.orbit_center[1],
                                 args.orbit_center[2]);
    for (int64_t f = 0; f < args.orbit_frames; ++f) {
        const double az = 2.0 * M_PI * static_cast<double>(f) /
                          static_cast<double>(args.orbit_frames);
        const Eigen::Vector3d eye =
            center + args.orbit_radius * Eigen::Vector3d(std::cos(az) * std::cos(args.orbit_elevation),
                                                         std::sin(az) * std::cos(args.orbit_elevation),
                                                         std::sin(args.orbit_elevation));
        npbg::Camera cam;
        cam.width = width;
        cam.height = height;
        cam.fx = fx;
        cam.fy = fy;
        cam.cx = (static_cast<double>(width) - 1.0) / 2.0;
        cam.cy = (static_cast<double>(height) - 1.0) / 2.0;
        cam.R = npbg::look_at_rotation(eye, center, Eigen::Vector3d(0, 0, 1));
        cam.t = -cam.R * eye;
        cams.push_back(cam);
    }
    return cams;
}

int cmd_render(const RenderArgs& args) {
    npbg::RenderNetParams<float> params = npbg::load_rendernet(args.ckpt);
    npbg::SceneDataset scene = npbg::load_scene(args.scene_dir);
    std::vector<npbg::Camera> cams;
    if (!args.camera_file.empty()) {
        std::ifstream is(args.camera_file);
        if (!is) throw std::runtime_error("render: cannot open camera file '" + args.camera_file +
                                          "'");
        json j;
        is >> j;
        for (const auto& entry : j) {
            // Accept either bare camera objects or {"camera": {...}} records.
            const json& cj = entry.contains("camera") ? entry.at("camera") : entry;
            npbg::Camera cam;
            cam.width = cj.at("width").get<int64_t>();
            cam.height = cj.at("height").get<int64_t>();
            cam.fx = cj.at("fx").get<double>();
            cam.fy = cj.at("fy").get<double>();
            cam.cx = cj.at("cx").get<double>();
            cam.cy = cj.at("cy").get<double>();
            const auto r = cj.at("R").get<std::vector<double>>();
            const auto t = cj.at("t").get<std::vector<double>>();
            if (r.size() != 9 || t.size() != 3)
                throw std::runtime_error("render: malformed camera entry");
            for (int i = 0; i < 3; ++i)
                for (int k = 0; k < 3; ++k) cam.R(i, k) = r[i * 3 + k];
            cam.t = Eigen::Vector3d(t[0], t[1], t[2]);
            cam.validate();
            cams.push_back(cam);
        }
    } else if (args.orbit) {
        const npbg::Camera& ref = scene.views.at(0).camera;
        cams = orbit_path(args, ref.width, ref.height, ref.fx, ref.fy);
    } else {
        throw std::runtime_error("render: provide --cameras or --orbit");
    }
    fs::create_directories(args.out);
    for (size_t f = 0; f < cams.size(); ++f) {
        const npbg::Tensorf rgb =
            npbg::render_view(params, scene.cloud, scene.descriptors, cams[f], args.aa);
        char name[64];
        std::snprintf(name, sizeof name, "frame_%04zu.png", f);
        npbg::save_png((fs::path(args.out) / name).string(), rgb);
    }
    write_resolved_config(args.out, "render",
                          json{{"ckpt", args.ckpt},
                               {"scene", args.scene_dir},
                               {"aa", args.aa},
                               {"frames", cams.size()},
                               {"cameras", args.camera_file},
                               {"orbit", args.orbit}});
    std::printf("render: wrote %zu frame(s) to %s\n", cams.size(), args.out.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& scene_dir, const std::string& desc_file,
             const std::string& out, int aa) {
    npbg::RenderNetParams<float> params = npbg::load_rendernet(ckpt);
    npbg::SceneDataset scene = npbg::load_scene(scene_dir);
    if (!desc_file.empty()) scene.descriptors = npbg::load_descriptors(desc_file);
    if (scene.descriptors.shape[1] != params.config.in_channels)
        throw std::runtime_error("eval: descriptor width " +
                                 std::to_string(scene.descriptors.shape[1]) +
                                 " does not match network input " +
                                 std::to_string(params.config.in_channels));
    const std::vector<npbg::ViewMetrics> metrics =
        npbg::evaluate_views(params, scene, scene.holdout_indices, aa);
    json views = json::array();
    double psnr_sum = 0, l1_sum = 0;
    for (const auto& m : metrics) {
        views.push_back({{"view", m.view}, {"psnr", m.psnr}, {"l1", m.l1}});
        psnr_sum += m.psnr;
        l1_sum += m.l1;
    }
    json report;
    report["views"] = views;
    report["aggregate"] = {{"psnr", metrics.empty() ? 0.0 : psnr_sum / metrics.size()},
                           {"l1", metrics.empty() ? 0.0 : l1_sum / metrics.size()},
                           {"count", metrics.size()}};
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / "eval.json");
    os << report.dump(2) << "\n";
    write_resolved_config(out, "eval",
                          json{{"ckpt", ckpt}, {"scene", scene_dir}, {"aa", aa}});
    std::printf("eval: %zu holdout view(s), mean psnr %.2f dB -> %s\n", metrics.size(),
                metrics.empty() ? 0.0 : psnr_sum / metrics.size(), out.c_str());
    return 0;
}

int cmd_compose(const std::string& scene_a, const std::string& scene_b,
                const std::string& transform_file, const std::string& out) {
    npbg::SceneDataset a = npbg::load_scene(scene_a);
    npbg::SceneDataset b = npbg::load_scene(scene_b);
    npbg::RigidTransform transform;
    if (!transform_file.empty()) {
        std::ifstream is(transform_file);
        if (!is)
            throw std::runtime_error("compose: cannot open transform '" + transform_file + "'");
        json j;
        is >> j;
        const auto r = j.at("R").get<std::vector<double>>();
        const auto t = j.at("t").get<std::vector<double>>();
        if (r.size() != 9 || t.size() != 3)
            throw std::runtime_error("compose: transform needs R[9] and t[3]");
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) transform.rotation(i, k) = r[i * 3 + k];
        transform.translation = Eigen::Vector3d(t[0], t[1], t[2]);
        transform.validate();
    }
    npbg::SceneDataset composed = npbg::compose_scenes(a, b, transform);
    npbg::save_scene(out, composed);
    write_resolved_config(out, "compose",
                          json{{"scene_a", scene_a},
                               {"scene_b", scene_b},
                               {"transform", transform_file}});
    std::printf("compose: %lld points -> %s\n", static_cast<long long>(composed.cloud.size()),
                out.c_str());
    return 0;
}

int cmd_downsample(const std::string& scene_dir, double voxel, const std::string& out) {
    npbg::SceneDataset scene = npbg::load_scene(scene_dir);
    const int64_t m = scene.descriptors.shape[1];
    scene.cloud = npbg::voxel_downsample(scene.cloud, voxel);
    // Centroids are new points; their descriptors restart from zero.
    scene.descriptors = npbg::make_descriptors<float>(scene.cloud.size(), m, false);
    npbg::save_scene(out, scene);
    write_resolved_config(out, "downsample",
                          json{{"scene", scene_dir}, {"voxel", voxel}});
    std::printf("downsample: %lld points -> %s\n", static_cast<long long>(scene.cloud.size()),
                out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural point-based graphics pipeline"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene");
    synth_cmd->add_option("--preset", synth.preset, "cube|sphere|two-planes");
    synth_cmd->add_option("--points", synth.spec.point_count, "Point budget");
    synth_cmd->add_option("--views", synth.spec.view_count, "View count");
    synth_cmd->add_option("--width", synth.spec.width, "Image width");
    synth_cmd->add_option("--height", synth.spec.height, "Image height");
    synth_cmd->add_option("--focal", synth.spec.focal, "Focal length in pixels");
    synth_cmd->add_option("--orbit-radius", synth.spec.orbit_radius, "Camera orbit radius");
    synth_cmd->add_option("--density-factor", synth.spec.density_factor,
                          "Oracle cloud density multiplier");
    synth_cmd->add_option("--holdout-every", synth.spec.holdout_every,
                          "Every k-th view goes to holdout");
    synth_cmd->add_option("--texture-scale", synth.spec.texture_scale, "Texture base frequency");
    synth_cmd->add_option("--descriptor-dim", synth.spec.descriptor_dim, "Descriptor width M");
    synth_cmd->add_option("--seed", synth.seed, "Generation seed");
    synth_cmd->add_option("--out", synth.out, "Output scene directory")->required();

    FitArgs fit_args;
    CLI::App* fit_cmd = app.add_subcommand("fit", "Fit network and descriptors to scenes");
    fit_cmd->add_option("--scene", fit_args.scene_dirs, "Scene directories")->required();
    fit_cmd->add_option("--ckpt", fit_args.ckpt, "Warm-start checkpoint (optional)");
    fit_cmd->add_option("--levels", fit_args.net.levels, "U-Net stages");
    fit_cmd->add_option("--in-channels", fit_args.net.in_channels, "Descriptor width M");
    fit_cmd->add_option("--base-channels", fit_args.net.base_channels, "Base channel width");
    fit_cmd->add_option("--pyramid-levels", fit_args.net.pyramid_levels, "Raw-image levels T");
    fit_cmd->add_option("--net-seed", fit_args.net_seed, "Weight init seed");
    add_fit_flags(fit_cmd, fit_args);

    FitArgs finetune_args;
    CLI::App* finetune_cmd =
        app.add_subcommand("finetune", "Fit a new scene from a pretrained checkpoint");
    finetune_cmd->add_option("--scene", finetune_args.scene_dirs, "Scene directory")->required();
    finetune_cmd->add_option("--ckpt", finetune_args.ckpt, "Pretrained checkpoint")->required();
    add_fit_flags(finetune_cmd, finetune_args);

    RenderArgs render;
    CLI::App* render_cmd = app.add_subcommand("render", "Render novel views");
    render_cmd->add_option("--ckpt", render.ckpt, "Checkpoint")->required();
    render_cmd->add_option("--scene", render.scene_dir, "Scene directory")->required();
    render_cmd->add_option("--cameras", render.camera_file, "Camera list JSON");
    render_cmd->add_flag("--orbit", render.orbit, "Render an orbit instead of a camera file");
    render_cmd->add_option("--orbit-center", render.orbit_center, "Orbit center (3 values)")
        ->expected(3);
    render_cmd->add_option("--orbit-radius", render.orbit_radius, "Orbit radius");
    render_cmd->add_option("--orbit-elevation", render.orbit_elevation, "Orbit elevation (rad)");
    render_cmd->add_option("--orbit-frames", render.orbit_frames, "Frame count");
    render_cmd->add_option("--aa", render.aa, "Supersampling factor: 1|2|4");
    render_cmd->add_option("--out", render.out, "Output directory")->required();

    std::string eval_ckpt, eval_scene, eval_desc, eval_out;
    int eval_aa = 1;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate holdout views");
    eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
    eval_cmd->add_option("--scene", eval_scene, "Scene directory")->required();
    eval_cmd->add_option("--descriptors", eval_desc, "Descriptor file override");
    eval_cmd->add_option("--aa", eval_aa, "Supersampling factor");
    eval_cmd->add_option("--out", eval_out, "Output directory")->required();

    std::string comp_a, comp_b, comp_transform, comp_out;
    CLI::App* comp_cmd = app.add_subcommand("compose", "Compose two scenes");
    comp_cmd->add_option("--scene-a", comp_a, "Base scene")->required();
    comp_cmd->add_option("--scene-b", comp_b, "Scene to transform and add")->required();
    comp_cmd->add_option("--transform", comp_transform, "Rigid transform JSON {R:[9],t:[3]}");
    comp_cmd->add_option("--out", comp_out, "Output scene directory")->required();

    std::string down_scene, down_out;
    double down_voxel = 0.01;
    CLI::App* down_cmd = app.add_subcommand("downsample", "Voxel-downsample a scene");
    down_cmd->add_option("--scene", down_scene, "Scene directory")->required();
    down_cmd->add_option("--voxel", down_voxel, "Voxel size")->required();
    down_cmd->add_option("--out", down_out, "Output scene directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth);
        if (fit_cmd->parsed()) return cmd_fit(fit_args, false);
        if (finetune_cmd->parsed()) return cmd_fit(finetune_args, true);
        if (render_cmd->parsed()) return cmd_render(render);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_scene, eval_desc, eval_out, eval_aa);
        if (comp_cmd->parsed()) return cmd_compose(comp_a, comp_b, comp_transform, comp_out);
        if (down_cmd->parsed()) return cmd_downsample(down_scene, down_voxel, down_out);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& c : msg)
            if (c == '\n') c = ' ';
        std::fprintf(stderr, "error: %s\n", msg.c_str());
        return 1;
    }
    return 0;
}
