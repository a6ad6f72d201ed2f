#include "wah/scene.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "wah/rng.hpp"

namespace wah {

namespace {

double lattice_value(uint64_t seed, int64_t ix, int64_t iy) {
    uint64_t h = seed;
    h ^= 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(ix + 0x10000);
    h = hash_u64(h);
    h ^= 0xc2b2ae3d27d4eb4fULL * static_cast<uint64_t>(iy + 0x10000);
    h = hash_u64(h);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double noise_octave(uint64_t seed, double x, double y) {
    double fx = std::floor(x), fy = std::floor(y);
    int64_t ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
    double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
    double v00 = lattice_value(seed, ix, iy);
    double v10 = lattice_value(seed, ix + 1, iy);
    double v01 = lattice_value(seed, ix, iy + 1);
    double v11 = lattice_value(seed, ix + 1, iy + 1);
    double a = v00 + (v10 - v00) * tx;
    double b = v01 + (v11 - v01) * tx;
    return a + (b - a) * ty;
}

}  // namespace

double value_noise(uint64_t seed, double x, double y, int octaves) {
    double sum = 0, amp = 1, norm = 0, freq = 1;
    for (int o = 0; o < octaves; ++o) {
        sum += amp * noise_octave(seed + 0x51ed2701ULL * o, x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    return sum / norm;
}

namespace {

// rgb texture from three decorrelated noise channels
std::array<float, 3> texture_rgb(uint64_t seed, double x, double y) {
    return {static_cast<float>(value_noise(seed, x, y)),
            static_cast<float>(value_noise(seed ^ 0x77aa11bb33cc55ddULL, x, y)),
            static_cast<float>(value_noise(seed ^ 0x1f2e3d4c5b6a7988ULL, x, y))};
}

}  // namespace

void Scene::validate() const {
    if (layers.size() < 2 || layers.size() > 6)
        throw std::invalid_argument("scene: layer count must be in [2, 6]");
    for (size_t i = 0; i < layers.size(); ++i) {
        if (!(layers[i].depth > 0)) throw std::invalid_argument("scene: layer depth must be positive");
        if (i > 0 && !(layers[i].depth > layers[i - 1].depth))
            throw std::invalid_argument("scene: layer depths must be strictly increasing");
    }
    if (!layers.back().opaque) throw std::invalid_argument("scene: last layer must be opaque");
    if (sprite.enabled && !(sprite.depth < layers.front().depth))
        throw std::invalid_argument("scene: sprite depth must be in front of the nearest layer");
}

Scene generate_scene(uint64_t seed, SpriteMode sprite_mode) {
    Rng rng(derive_seed(seed, "scene"));
    Scene scene;
    scene.seed = seed;

    int n_layers = 2 + rng.next_int(5);  // 2..6
    double depth = rng.next_range(1.6, 2.6);
    for (int i = 0; i < n_layers; ++i) {
        SceneLayer layer;
        layer.depth = depth;
        layer.texture_seed = derive_seed(seed, "layer_texture", i);
        layer.coverage_seed = derive_seed(seed, "layer_coverage", i);
        layer.texture_frequency = rng.next_range(0.8, 1.6) / std::sqrt(depth);
        layer.opaque = (i == n_layers - 1);
        layer.coverage_threshold = layer.opaque ? 0.0 : rng.next_range(0.45, 0.60);
        scene.layers.push_back(layer);
        depth *= rng.next_range(1.5, 2.1);
    }

    scene.background = {static_cast<float>(rng.next_range(0.1, 0.9)),
                        static_cast<float>(rng.next_range(0.1, 0.9)),
                        static_cast<float>(rng.next_range(0.1, 0.9))};

    bool want_sprite = sprite_mode == SpriteMode::force_on ||
                       (sprite_mode == SpriteMode::seeded && rng.next_bool(0.5));
    if (sprite_mode == SpriteMode::seeded) rng.next_u64();  // keep stream aligned across modes
    if (want_sprite) {
        Sprite s;
        s.enabled = true;
        s.depth = scene.layers.front().depth * rng.next_range(0.55, 0.85);
        s.radius = rng.next_range(0.10, 0.22) * s.depth;
        double view_half = 0.5 * s.depth;  // roughly half the view width at fx = width
        s.start = Eigen::Vector2d(rng.next_range(-view_half * 0.5, view_half * 0.5),
                                  rng.next_range(-view_half * 0.5, view_half * 0.5));
        double speed = rng.next_range(0.002, 0.012) * s.depth;
        double dir = rng.next_range(0, 6.283185307179586);
        s.velocity = Eigen::Vector2d(speed * std::cos(dir), speed * std::sin(dir));
        s.texture_seed = derive_seed(seed, "sprite_texture");
        scene.sprite = s;
    }

    scene.validate();
    return scene;
}

RenderResult render(const Scene& scene, const Pose& camera, const Intrinsics& intrinsics,
                    int frame_index) {
    scene.validate();
    intrinsics.validate();
    const int w = intrinsics.width, h = intrinsics.height;
    RenderResult out{Image(w, h, 3), DepthMap(w, h), Mask(w, h)};

    const Pose world_from_cam = inverse(camera);
    const Eigen::Matrix3d r_wc = world_from_cam.rotation;
    const Eigen::Vector3d origin = world_from_cam.translation;  // camera center
    const Eigen::Vector2d sprite_center =
        scene.sprite.enabled ? scene.sprite.center(frame_index) : Eigen::Vector2d::Zero();
    const double sprite_r2 = scene.sprite.radius * scene.sprite.radius;

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            Eigen::Vector3d dir_cam((x + 0.5 - intrinsics.cx) / intrinsics.fx,
                                    (y + 0.5 - intrinsics.cy) / intrinsics.fy, 1.0);
            Eigen::Vector3d dir = r_wc * dir_cam;

            std::array<float, 3> rgb = scene.background;
            double depth = scene.layers.back().depth * 4.0;  // fallback, normally overwritten
            bool fg = false;
            bool hit = false;

            // sprite plane first (strictly nearest by construction)
            if (scene.sprite.enabled && std::abs(dir.z()) > 1e-12) {
                double s = (scene.sprite.depth - origin.z()) / dir.z();
                if (s > 1e-9) {
                    Eigen::Vector3d p = origin + s * dir;
                    Eigen::Vector2d d(p.x() - sprite_center.x(), p.y() - sprite_center.y());
                    if (d.squaredNorm() <= sprite_r2) {
                        rgb = texture_rgb(scene.sprite.texture_seed, p.x() * 4.0, p.y() * 4.0);
                        depth = (camera.rotation * p + camera.translation).z();
                        fg = true;
                        hit = true;
                    }
                }
            }

            if (!hit) {
                for (const SceneLayer& layer : scene.layers) {
                    if (std::abs(dir.z()) < 1e-12) break;
                    double s = (layer.depth - origin.z()) / dir.z();
                    if (s <= 1e-9) continue;
                    Eigen::Vector3d p = origin + s * dir;
                    if (!layer.opaque) {
                        double cov = value_noise(layer.coverage_seed, p.x() * 0.7, p.y() * 0.7);
                        if (cov < layer.coverage_threshold) continue;
                    }
                    double fx = p.x() * layer.texture_frequency;
                    double fy = p.y() * layer.texture_frequency;
                    rgb = texture_rgb(layer.texture_seed, fx, fy);
                    if (layer.opaque) {
                        // tint toward the scene background so the field is used
                        for (int c = 0; c < 3; ++c)
                            rgb[c] = 0.75f * rgb[c] + 0.25f * scene.background[c];
                    }
                    depth = (camera.rotation * p + camera.translation).z();
                    hit = true;
                    break;
                }
            }

            for (int c = 0; c < 3; ++c) out.frame.at(y, x, c) = quantize8(rgb[c]);
            out.depth.at(y, x) = static_cast<float>(depth);
            out.fg_mask.at(y, x) = fg ? 1 : 0;
        }
    }
    return out;
}

void ClipRecord::validate() const {
    if (frames.size() < 2) throw std::invalid_argument("clip: needs at least 2 frames");
    if (frames.size() != depths.size() || frames.size() != fg_masks.size() ||
        frames.size() != trajectory.size())
        throw std::invalid_argument("clip: per-frame container lengths disagree");
    for (size_t i = 0; i < frames.size(); ++i) {
        if (!frames[i].same_shape(frames[0]))
            throw std::invalid_argument("clip: frame shapes disagree");
        for (float d : depths[i].data)
            if (!(d > 0) || !std::isfinite(d))
                throw std::invalid_argument("clip: depth must be finite and positive");
    }
}

ClipRecord make_clip(const Scene& scene, const Trajectory& trajectory) {
    if (trajectory.size() < 2) throw std::invalid_argument("make_clip: trajectory must have T >= 2");
    ClipRecord clip;
    clip.scene_seed = scene.seed;
    clip.trajectory = trajectory;
    const int t = static_cast<int>(trajectory.size());
    clip.frames.resize(t);
    clip.depths.resize(t);
    clip.fg_masks.resize(t);

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < t; ++i) {
        RenderResult r = render(scene, trajectory.poses[i], trajectory.intrinsics, i);
        clip.frames[i] = std::move(r.frame);
        clip.depths[i] = std::move(r.depth);
        clip.fg_masks[i] = std::move(r.fg_mask);
    }
    clip.validate();
    return clip;
}

void write_clip(const ClipRecord& clip, const std::filesystem::path& directory) {
    clip.validate();
    std::filesystem::create_directories(directory);
    char name[32];
    nlohmann::json manifest;
    manifest["scene_seed"] = clip.scene_seed;
    manifest["frame_count"] = clip.size();
    manifest["width"] = clip.frames[0].width;
    manifest["height"] = clip.frames[0].height;
    manifest["depth_file"] = "depth.wahd";
    manifest["trajectory_file"] = "trajectory.txt";
    nlohmann::json frame_files = nlohmann::json::array();
    nlohmann::json mask_files = nlohmann::json::array();
    for (size_t i = 0; i < clip.size(); ++i) {
        std::snprintf(name, sizeof(name), "frame_%03zu.ppm", i);
        write_ppm(directory / name, clip.frames[i]);
        frame_files.push_back(name);
        std::snprintf(name, sizeof(name), "mask_%03zu.pgm", i);
        write_pgm(directory / name, clip.fg_masks[i]);
        mask_files.push_back(name);
    }
    manifest["frames"] = frame_files;
    manifest["masks"] = mask_files;
    write_depth_stack(directory / "depth.wahd", clip.depths);
    write_trajectory_file((directory / "trajectory.txt").string(), clip.trajectory);
    std::ofstream os(directory / "manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("write_clip: cannot write manifest in " + directory.string());
}

ClipRecord read_clip(const std::filesystem::path& directory) {
    std::ifstream is(directory / "manifest.json");
    if (!is) throw std::runtime_error("read_clip: missing manifest in " + directory.string());
    nlohmann::json manifest = nlohmann::json::parse(is);
    ClipRecord clip;
    clip.scene_seed = manifest.at("scene_seed").get<uint64_t>();
    const int w = manifest.at("width").get<int>();
    const int h = manifest.at("height").get<int>();
    for (const auto& f : manifest.at("frames")) clip.frames.push_back(read_ppm(directory / f.get<std::string>()));
    for (const auto& f : manifest.at("masks")) clip.fg_masks.push_back(read_pgm(directory / f.get<std::string>()));
    clip.depths = read_depth_stack(directory / manifest.at("depth_file").get<std::string>());
    clip.trajectory =
        read_trajectory_file((directory / manifest.at("trajectory_file").get<std::string>()).string(), w, h);
    clip.validate();
    return clip;
}

FgStats foreground_stats(std::span<const Mask> fg_masks) {
    FgStats stats;
    if (fg_masks.empty()) return stats;
    const double diag = std::hypot(fg_masks[0].width, fg_masks[0].height);

    double area_sum = 0;
    std::vector<std::optional<Eigen::Vector2d>> centroids;
    for (const Mask& m : fg_masks) {
        size_t count = m.count_set();
        area_sum += static_cast<double>(count) / (static_cast<double>(m.width) * m.height);
        if (count == 0) {
            centroids.push_back(std::nullopt);
            continue;
        }
        double sx = 0, sy = 0;
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
                if (m.at(y, x)) {
                    sx += x;
                    sy += y;
                }
        centroids.push_back(Eigen::Vector2d(sx / count, sy / count));
    }
    stats.area_mean = area_sum / static_cast<double>(fg_masks.size());

    double motion_sum = 0;
    int motion_n = 0;
    for (size_t i = 0; i + 1 < centroids.size(); ++i) {
        if (!centroids[i] || !centroids[i + 1]) continue;
        motion_sum += (*centroids[i + 1] - *centroids[i]).norm() / diag;
        ++motion_n;
    }
    if (motion_n > 0) stats.motion = motion_sum / motion_n;
    return stats;
}

}  // namespace wah
