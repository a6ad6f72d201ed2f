#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>

#include "wah/camera.hpp"
#include "wah/image.hpp"

namespace wah {

// Seeded band-limited value noise in [0,1], 3 octaves, C1-smooth.
double value_noise(uint64_t seed, double x, double y, int octaves = 3);

// Fronto-parallel textured plane at world depth z. Non-opaque layers are
// covered only where their coverage-noise field exceeds the threshold, so
// farther layers show through.
struct SceneLayer {
    double depth = 1.0;
    uint64_t texture_seed = 0;
    uint64_t coverage_seed = 0;
    double coverage_threshold = 0.0;  // 0 = fully covered
    bool opaque = false;
    double texture_frequency = 1.0;  // cycles per world unit
};

// Textured disk moving on a seeded linear path in its own depth plane.
struct Sprite {
    bool enabled = false;
    double depth = 1.0;
    double radius = 0.2;
    Eigen::Vector2d start = Eigen::Vector2d::Zero();
    Eigen::Vector2d velocity = Eigen::Vector2d::Zero();  // world units per frame
    uint64_t texture_seed = 0;

    Eigen::Vector2d center(int frame_index) const { return start + velocity * frame_index; }
};

struct Scene {
    uint64_t seed = 0;
    std::vector<SceneLayer> layers;  // depths strictly increasing; last is opaque
    Sprite sprite;
    std::array<float, 3> background = {0, 0, 0};

    void validate() const;
};

enum class SpriteMode { seeded, force_on, force_off };

Scene generate_scene(uint64_t seed, SpriteMode sprite_mode = SpriteMode::seeded);

struct RenderResult {
    Image frame;
    DepthMap depth;
    Mask fg_mask;
};

// Front-to-back composited rasterization. The frame is quantized to the
// 8-bit grid so disk round-trips are exact; depth stores the camera-space
// depth of the visible surface at every pixel.
RenderResult render(const Scene& scene, const Pose& camera, const Intrinsics& intrinsics,
                    int frame_index);

struct ClipRecord {
    std::vector<Image> frames;
    std::vector<DepthMap> depths;
    std::vector<Mask> fg_masks;
    Trajectory trajectory;
    uint64_t scene_seed = 0;

    size_t size() const { return frames.size(); }
    void validate() const;
};

ClipRecord make_clip(const Scene& scene, const Trajectory& trajectory);

// Directory layout: frame_%03d.ppm, mask_%03d.pgm, depth.wahd,
// trajectory.txt, manifest.json.
void write_clip(const ClipRecord& clip, const std::filesystem::path& directory);
ClipRecord read_clip(const std::filesystem::path& directory);

// Mean per-frame foreground centroid displacement normalized by the image
// diagonal, and mean foreground area fraction. Frames without foreground
// pixels are skipped for the motion term.
struct FgStats {
    double motion = 0;
    double area_mean = 0;
};
FgStats foreground_stats(std::span<const Mask> fg_masks);

}  // namespace wah
