#include "wah/warp.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

namespace wah {

namespace {

struct Projected {
    double px, py, z;
};

inline Projected project_point(const Pose& camera, const Intrinsics& k, const Eigen::Vector3d& p) {
    Eigen::Vector3d c = camera.rotation * p + camera.translation;
    return {k.fx * (c.x() / c.z()) + k.cx, k.fy * (c.y() / c.z()) + k.cy, c.z()};
}

// covered pixel block for a landing position
inline void footprint(const Projected& pr, bool two_by_two, int& u0, int& v0, int& u1, int& v1) {
    if (two_by_two) {
        u0 = static_cast<int>(std::floor(pr.px - 0.5));
        v0 = static_cast<int>(std::floor(pr.py - 0.5));
        u1 = u0 + 1;
        v1 = v0 + 1;
    } else {
        u0 = u1 = static_cast<int>(std::floor(pr.px));
        v0 = v1 = static_cast<int>(std::floor(pr.py));
    }
}

constexpr double kMinDepth = 1e-6;
constexpr double kTieEps = 1e-12;

}  // namespace

PointCloud unproject(const Image& frame, const DepthMap& depth, const Intrinsics& intrinsics,
                     const Pose& camera_from_world) {
    intrinsics.validate();
    if (frame.width != intrinsics.width || frame.height != intrinsics.height ||
        depth.width != frame.width || depth.height != frame.height)
        throw std::invalid_argument("unproject: frame/depth/intrinsics shapes disagree");

    const Pose world_from_cam = inverse(camera_from_world);
    PointCloud cloud;
    cloud.points.resize(frame.pixel_count());
    for (int y = 0; y < frame.height; ++y) {
        for (int x = 0; x < frame.width; ++x) {
            const float d = depth.at(y, x);
            if (!(d > 0) || !std::isfinite(d))
                throw std::invalid_argument("unproject: non-positive depth at pixel (" +
                                            std::to_string(x) + ", " + std::to_string(y) + ")");
            Eigen::Vector3d cam(d * (x + 0.5 - intrinsics.cx) / intrinsics.fx,
                                d * (y + 0.5 - intrinsics.cy) / intrinsics.fy, d);
            ColoredPoint& pt = cloud.points[static_cast<size_t>(y) * frame.width + x];
            pt.position = world_from_cam.rotation * cam + world_from_cam.translation;
            pt.rgb = {frame.at(y, x, 0), frame.at(y, x, 1), frame.at(y, x, 2)};
        }
    }
    return cloud;
}

WarpFrame forward_splat(const PointCloud& cloud, const Pose& target_camera,
                        const Intrinsics& intrinsics, const SplatOptions& options) {
    if (cloud.points.empty()) throw std::invalid_argument("forward_splat: empty point set");
    const int w = intrinsics.width, h = intrinsics.height;
    WarpFrame out{Image(w, h, 3), Mask(w, h)};
    std::vector<double> zbuf(static_cast<size_t>(w) * h, std::numeric_limits<double>::infinity());

    // Serial over points in source index order; the incumbent always has the
    // smaller index, so a candidate must beat it by more than the tie epsilon.
    for (size_t idx = 0; idx < cloud.points.size(); ++idx) {
        const ColoredPoint& pt = cloud.points[idx];
        Projected pr = project_point(target_camera, intrinsics, pt.position);
        if (!(pr.z > kMinDepth)) continue;
        int u0, v0, u1, v1;
        footprint(pr, options.footprint2x2, u0, v0, u1, v1);
        for (int v = v0; v <= v1; ++v) {
            if (v < 0 || v >= h) continue;
            for (int u = u0; u <= u1; ++u) {
                if (u < 0 || u >= w) continue;
                const size_t pix = static_cast<size_t>(v) * w + u;
                if (pr.z < zbuf[pix] - kTieEps) {
                    zbuf[pix] = pr.z;
                    out.valid.data[pix] = 1;
                    for (int c = 0; c < 3; ++c) out.rgb.data[pix * 3 + c] = pt.rgb[c];
                }
            }
        }
    }
    return out;
}

WarpFrame forward_splat_reference(const PointCloud& cloud, const Pose& target_camera,
                                  const Intrinsics& intrinsics, const SplatOptions& options) {
    if (cloud.points.empty()) throw std::invalid_argument("forward_splat: empty point set");
    const int w = intrinsics.width, h = intrinsics.height;
    WarpFrame out{Image(w, h, 3), Mask(w, h)};

    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            double best_z = std::numeric_limits<double>::infinity();
            long best = -1;
            for (size_t idx = 0; idx < cloud.points.size(); ++idx) {
                Projected pr = project_point(target_camera, intrinsics, cloud.points[idx].position);
                if (!(pr.z > kMinDepth)) continue;
                int u0, v0, u1, v1;
                footprint(pr, options.footprint2x2, u0, v0, u1, v1);
                if (u < u0 || u > u1 || v < v0 || v > v1) continue;
                if (pr.z < best_z - kTieEps) {
                    best_z = pr.z;
                    best = static_cast<long>(idx);
                }
            }
            if (best >= 0) {
                out.valid.at(v, u) = 1;
                for (int c = 0; c < 3; ++c)
                    out.rgb.at(v, u, c) = cloud.points[static_cast<size_t>(best)].rgb[c];
            }
        }
    }
    return out;
}

WarpVideo build_warp_video(const ClipRecord& clip, const Trajectory& target_trajectory,
                           int source_frame_index, const SplatOptions& options) {
    if (source_frame_index < 0 || static_cast<size_t>(source_frame_index) >= clip.size())
        throw std::invalid_argument("build_warp_video: source frame index out of range");
    const Intrinsics& k = target_trajectory.intrinsics;
    if (clip.frames[0].width != k.width || clip.frames[0].height != k.height)
        throw std::invalid_argument("build_warp_video: clip resolution does not match target intrinsics");

    PointCloud cloud = unproject(clip.frames[source_frame_index], clip.depths[source_frame_index],
                                 clip.trajectory.intrinsics, clip.trajectory.poses[source_frame_index]);

    WarpVideo wv;
    wv.source_frame_index = source_frame_index;
    wv.trajectory = target_trajectory;
    wv.frames.resize(target_trajectory.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(target_trajectory.size()); ++i)
        wv.frames[i] = forward_splat(cloud, target_trajectory.poses[i], k, options);
    return wv;
}

double invisible_ratio(const Mask& valid) {
    if (valid.data.empty()) throw std::invalid_argument("invisible_ratio: empty mask");
    return 1.0 - static_cast<double>(valid.count_set()) / static_cast<double>(valid.data.size());
}

SourceDiagnostics source_diagnostics(const ClipRecord& clip) {
    clip.validate();
    SourceDiagnostics d;

    WarpVideo wv = build_warp_video(clip, clip.trajectory, 0);
    double sum = 0;
    for (const WarpFrame& f : wv.frames) {
        double r = invisible_ratio(f.valid);
        sum += r;
        d.inv_ratio_max = std::max(d.inv_ratio_max, r);
    }
    d.inv_ratio_mean = sum / static_cast<double>(wv.size());

    TrajectoryDiagnostics td = trajectory_diagnostics(clip.trajectory);
    d.rot_mean_deg = td.rot_mean_deg;
    d.rot_max_deg = td.rot_max_deg;
    d.trans_dir_angle_mean_deg = td.trans_dir_angle_mean_deg;

    FgStats fg = foreground_stats(clip.fg_masks);
    d.fg_motion = fg.motion;
    d.fg_area_mean = fg.area_mean;
    return d;
}

std::string source_diagnostics_csv_header() {
    return "inv_mean,inv_max,rot_mean_deg,rot_max_deg,trans_dir_angle_mean_deg,fg_motion,fg_area_mean";
}

std::string source_diagnostics_csv_row(const SourceDiagnostics& d) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g", d.inv_ratio_mean,
                  d.inv_ratio_max, d.rot_mean_deg, d.rot_max_deg, d.trans_dir_angle_mean_deg,
                  d.fg_motion, d.fg_area_mean);
    return buf;
}

void write_warp_video(const WarpVideo& wv, const std::filesystem::path& directory) {
    if (wv.frames.empty()) throw std::invalid_argument("write_warp_video: empty warp video");
    std::filesystem::create_directories(directory);
    char name[32];
    nlohmann::json manifest;
    manifest["source_frame_index"] = wv.source_frame_index;
    manifest["frame_count"] = wv.size();
    manifest["trajectory_file"] = "trajectory.txt";
    nlohmann::json frames = nlohmann::json::array(), masks = nlohmann::json::array();
    for (size_t i = 0; i < wv.size(); ++i) {
        std::snprintf(name, sizeof(name), "warp_%03zu.ppm", i);
        write_ppm(directory / name, wv.frames[i].rgb);
        frames.push_back(name);
        std::snprintf(name, sizeof(name), "valid_%03zu.pgm", i);
        write_pgm(directory / name, wv.frames[i].valid);
        masks.push_back(name);
    }
    manifest["frames"] = frames;
    manifest["masks"] = masks;
    write_trajectory_file((directory / "trajectory.txt").string(), wv.trajectory);
    std::ofstream os(directory / "warp_manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("write_warp_video: cannot write manifest");
}

WarpVideo read_warp_video(const std::filesystem::path& directory) {
    std::ifstream is(directory / "warp_manifest.json");
    if (!is) throw std::runtime_error("read_warp_video: missing manifest in " + directory.string());
    nlohmann::json manifest = nlohmann::json::parse(is);
    WarpVideo wv;
    wv.source_frame_index = manifest.at("source_frame_index").get<int>();
    const auto& frames = manifest.at("frames");
    const auto& masks = manifest.at("masks");
    for (size_t i = 0; i < frames.size(); ++i) {
        WarpFrame f;
        f.rgb = read_ppm(directory / frames[i].get<std::string>());
        f.valid = read_pgm(directory / masks[i].get<std::string>());
        wv.frames.push_back(std::move(f));
    }
    if (wv.frames.empty()) throw std::runtime_error("read_warp_video: no frames listed");
    wv.trajectory = read_trajectory_file(
        (directory / manifest.at("trajectory_file").get<std::string>()).string(),
        wv.frames[0].rgb.width, wv.frames[0].rgb.height);
    return wv;
}

}  // namespace wah
