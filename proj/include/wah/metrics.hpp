#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wah/camera.hpp"
#include "wah/image.hpp"
#include "wah/scene.hpp"

namespace wah {

// 10*log10(1/MSE) over unmasked or mask-valid pixels, capped at 99 dB;
// nullopt when the mask admits no pixels.
std::optional<double> psnr(const Image& a, const Image& b, const Mask* mask = nullptr);

// Mean local SSIM over 8x8 stride-1 windows (k1=0.01, k2=0.03, L=1) on the
// channel-mean image; masked windows require >= 50% coverage and use only
// the covered pixels. nullopt when no window qualifies.
std::optional<double> ssim(const Image& a, const Image& b, const Mask* mask = nullptr);

struct PoseEstimate {
    Pose pose;
    bool converged = false;
    int descent_iterations = 0;
    double final_error = 0;  // mean squared photometric error at the returned pose
};

// Minimizes the photometric error between render(scene, pose) and the frame
// by a coarse-to-fine search (3 pyramid levels) followed by per-parameter
// coordinate descent until the step drops below 1e-4 or 200 iterations.
PoseEstimate estimate_pose_photometric(const Image& frame, const Scene& scene,
                                       const Intrinsics& intrinsics, const Pose& init,
                                       int frame_index = 0);

struct TrajErrors {
    double r_err_deg = 0;
    double t_err = 0;
    bool t_err_path_normalized = true;  // false when gt path length ~ 0 (raw mean error)
};

// Sim(3)-aligns est to gt, then r_err = mean per-frame geodesic angle after
// applying the alignment rotation and t_err = mean position error divided by
// the gt path length.
TrajErrors trajectory_errors(const Trajectory& est, const Trajectory& gt);

struct MetricsReport {
    std::optional<double> psnr_db, ssim_score;
    std::optional<double> vis_psnr_db, vis_ssim;  // masked to warp-valid pixels
    double r_err_deg = 0, t_err = 0;
    bool t_err_path_normalized = true;
    std::vector<std::optional<double>> per_frame_psnr, per_frame_ssim;
    std::vector<std::optional<double>> per_frame_vis_psnr, per_frame_vis_ssim;
    std::vector<double> per_frame_r_err_deg;

    std::string to_json_text() const;
};

// Masked metrics skip frames whose valid pixel count is below 1% of the
// frame; the aggregate is the mean of the defined per-frame values.
MetricsReport score_generation(std::span<const Image> generated, std::span<const Image> reference,
                               std::span<const Mask> valid_masks, const Trajectory& est,
                               const Trajectory& commanded);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& m);

struct StageTime {
    std::string stage;
    double seconds = 0;
};

struct RuntimeProfile {
    std::string regime;
    double visible_fraction = 0;
    int tokens_clean = 0, tokens_warp = 0, tokens_target = 0;
    int total_tokens() const { return tokens_clean + tokens_warp + tokens_target; }
    std::vector<StageTime> stages;  // warp construction, packing, transformer/sampling, end-to-end

    double stage_seconds(const std::string& name) const;
};

std::string profile_csv_header();
std::string profile_csv_rows(const RuntimeProfile& p);

}  // namespace wah
