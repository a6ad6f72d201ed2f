#pragma once

#include <filesystem>

#include "wah/camera.hpp"
#include "wah/image.hpp"
#include "wah/scene.hpp"

namespace wah {

struct WarpFrame {
    Image rgb;   // holes filled with 0
    Mask valid;  // 1 where at least one splat landed
};

struct WarpVideo {
    std::vector<WarpFrame> frames;
    int source_frame_index = 0;
    Trajectory trajectory;  // target cameras, one per frame

    size_t size() const { return frames.size(); }
};

struct ColoredPoint {
    Eigen::Vector3d position;  // world space
    std::array<float, 3> rgb;
};

// One point per source pixel, in raster order (the vector index is the
// source linear index used for z-buffer tie-breaking).
struct PointCloud {
    std::vector<ColoredPoint> points;
};

// world point = world_from_camera * (depth * K^-1 * (u+0.5, v+0.5, 1))
PointCloud unproject(const Image& frame, const DepthMap& depth, const Intrinsics& intrinsics,
                     const Pose& camera_from_world);

struct SplatOptions {
    bool footprint2x2 = false;  // cover the 2x2 block around the landing position
};

// Nearest-pixel forward splat with a z-buffer: smallest target-camera depth
// wins; depths equal within 1e-12 keep the smaller source index; points with
// depth <= 1e-6 are discarded.
WarpFrame forward_splat(const PointCloud& cloud, const Pose& target_camera,
                        const Intrinsics& intrinsics, const SplatOptions& options = {});

// Quadratic brute-force reference: for every target pixel, scans every
// source point with no spatial acceleration. Kept for testing; must agree
// bit-exactly with forward_splat.
WarpFrame forward_splat_reference(const PointCloud& cloud, const Pose& target_camera,
                                  const Intrinsics& intrinsics, const SplatOptions& options = {});

// Warps the single source observation into every target camera, in order.
// Per-frame work runs in parallel with private z-buffers; output bytes do
// not depend on the thread count.
WarpVideo build_warp_video(const ClipRecord& clip, const Trajectory& target_trajectory,
                           int source_frame_index, const SplatOptions& options = {});

double invisible_ratio(const Mask& valid);

struct SourceDiagnostics {
    double inv_ratio_mean = 0;
    double inv_ratio_max = 0;
    double rot_mean_deg = 0;
    double rot_max_deg = 0;
    double trans_dir_angle_mean_deg = 0;
    double fg_motion = 0;
    double fg_area_mean = 0;
};

// Invisible ratios come from warping frame 0 through the clip's own
// trajectory; rotation/translation stats from trajectory_diagnostics;
// foreground stats from the clip's fg masks.
SourceDiagnostics source_diagnostics(const ClipRecord& clip);

// Fixed column order shared with the sweep result tables.
std::string source_diagnostics_csv_header();
std::string source_diagnostics_csv_row(const SourceDiagnostics& d);

void write_warp_video(const WarpVideo& wv, const std::filesystem::path& directory);
WarpVideo read_warp_video(const std::filesystem::path& directory);

}  // namespace wah
