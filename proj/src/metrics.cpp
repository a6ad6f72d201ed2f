#include "wah/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>

namespace wah {

namespace {

constexpr double kPsnrCap = 99.0;

double mean_or_nan(const std::vector<std::optional<double>>& values, bool& any) {
    double sum = 0;
    int n = 0;
    for (const auto& v : values)
        if (v) {
            sum += *v;
            ++n;
        }
    any = n > 0;
    return n > 0 ? sum / n : 0.0;
}

}  // namespace

std::optional<double> psnr(const Image& a, const Image& b, const Mask* mask) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    if (mask && (mask->width != a.width || mask->height != a.height))
        throw std::invalid_argument("psnr: mask shape mismatch");
    double se = 0;
    long n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (mask && !mask->at(y, x)) continue;
            for (int c = 0; c < a.channels; ++c) {
                double d = static_cast<double>(a.at(y, x, c)) - b.at(y, x, c);
                se += d * d;
            }
            n += a.channels;
        }
    if (n == 0) return std::nullopt;
    double mse = se / static_cast<double>(n);
    if (mse <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::optional<double> ssim(const Image& a, const Image& b, const Mask* mask) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    if (mask && (mask->width != a.width || mask->height != a.height))
        throw std::invalid_argument("ssim: mask shape mismatch");
    constexpr int kWin = 8;
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // L = 1
    if (a.width < kWin || a.height < kWin) throw std::invalid_argument("ssim: image smaller than window");

    // channel-mean images
    std::vector<double> ga(a.pixel_count()), gb(a.pixel_count());
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            double sa = 0, sb = 0;
            for (int c = 0; c < a.channels; ++c) {
                sa += a.at(y, x, c);
                sb += b.at(y, x, c);
            }
            ga[static_cast<size_t>(y) * a.width + x] = sa / a.channels;
            gb[static_cast<size_t>(y) * a.width + x] = sb / a.channels;
        }

    double total = 0;
    long windows = 0;
    for (int y = 0; y + kWin <= a.height; ++y)
        for (int x = 0; x + kWin <= a.width; ++x) {
            int covered = 0;
            double ma = 0, mb = 0;
            for (int dy = 0; dy < kWin; ++dy)
                for (int dx = 0; dx < kWin; ++dx) {
                    if (mask && !mask->at(y + dy, x + dx)) continue;
                    size_t i = static_cast<size_t>(y + dy) * a.width + (x + dx);
                    ma += ga[i];
                    mb += gb[i];
                    ++covered;
                }
            if (mask && covered * 2 < kWin * kWin) continue;
            if (covered == 0) continue;
            ma /= covered;
            mb /= covered;
            double va = 0, vb = 0, cov = 0;
            for (int dy = 0; dy < kWin; ++dy)
                for (int dx = 0; dx < kWin; ++dx) {
                    if (mask && !mask->at(y + dy, x + dx)) continue;
                    size_t i = static_cast<size_t>(y + dy) * a.width + (x + dx);
                    double da = ga[i] - ma, db = gb[i] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= covered;
            vb /= covered;
            cov /= covered;
            double s = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            ++windows;
        }
    if (windows == 0) return std::nullopt;
    return total / static_cast<double>(windows);
}

// ---------------------------------------------------------------------------
// Photometric pose estimation
// ---------------------------------------------------------------------------

namespace {

// Point decimation paired with decimate_intrinsics below: the coarse render
// samples exactly the rays of the kept full-resolution pixels, so the coarse
// objective is bit-exact at the true pose.
Image point_decimate(const Image& img, int factor) {
    if (factor == 1) return img;
    Image out(img.width / factor, img.height / factor, img.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < out.channels; ++c) out.at(y, x, c) = img.at(y * factor, x * factor, c);
    return out;
}

// Coarse pixel (x', y') must see the same ray as full-res pixel (f*x', f*y'):
// fx' = fx/f and cx' = (cx + (f-1)/2) / f.
Intrinsics decimate_intrinsics(const Intrinsics& k, int factor) {
    const double off = (factor - 1) * 0.5;
    return make_intrinsics(k.fx / factor, k.fy / factor, (k.cx + off) / factor,
                           (k.cy + off) / factor, k.width / factor, k.height / factor);
}

Pose apply_delta(const Pose& base, const double* p) {
    Pose d;
    d.rotation = rot_x(p[0]) * rot_y(p[1]) * rot_z(p[2]);
    d.translation = Eigen::Vector3d(p[3], p[4], p[5]);
    return compose(d, base);  // perturbation in the camera frame
}

double photometric_mse(const Scene& scene, const Pose& pose, const Intrinsics& k, int frame_index,
                       const Image& target) {
    RenderResult r = render(scene, pose, k, frame_index);
    double se = 0;
    for (size_t i = 0; i < r.frame.data.size(); ++i) {
        double d = static_cast<double>(r.frame.data[i]) - target.data[i];
        se += d * d;
    }
    return se / static_cast<double>(r.frame.data.size());
}

}  // namespace

PoseEstimate estimate_pose_photometric(const Image& frame, const Scene& scene,
                                       const Intrinsics& intrinsics, const Pose& init,
                                       int frame_index) {
    if (frame.width != intrinsics.width || frame.height != intrinsics.height)
        throw std::invalid_argument("estimate_pose_photometric: frame/intrinsics shape mismatch");

    constexpr int kMaxDescentIters = 200;
    constexpr double kMinStep = 1e-4;
    const int factors[3] = {4, 2, 1};

    // yaw <-> x-shift and pitch <-> y-shift are nearly degenerate at narrow
    // fov: a rotation theta cancels a translation of theta * depth. Walking
    // that coupled direction as its own descent axis turns the shallow
    // diagonal valley into an ordinary coordinate.
    std::vector<double> depths;
    for (const SceneLayer& l : scene.layers) depths.push_back(l.depth);
    std::sort(depths.begin(), depths.end());
    const double z_near = depths.front();
    const double z_med = depths[depths.size() / 2];

    double p[6] = {0, 0, 0, 0, 0, 0};
    PoseEstimate est;
    int iters_used = 0;
    bool reached_min_step = false;

    for (int level = 0; level < 3; ++level) {
        const int f = factors[level];
        if (intrinsics.width % f != 0 || intrinsics.height % f != 0) continue;
        Intrinsics k = decimate_intrinsics(intrinsics, f);
        Image target = point_decimate(frame, f);
        auto err = [&](const double* q) {
            return photometric_mse(scene, apply_delta(init, q), k, frame_index, target);
        };

        double best = err(p);

        if (level == 0) {
            // joint 3^6 grid around the initial pose
            const double rs = 0.03, ts = 0.05;
            double q[6], best_q[6];
            std::copy(p, p + 6, best_q);
            for (int a0 = -1; a0 <= 1; ++a0)
                for (int a1 = -1; a1 <= 1; ++a1)
                    for (int a2 = -1; a2 <= 1; ++a2)
                        for (int a3 = -1; a3 <= 1; ++a3)
                            for (int a4 = -1; a4 <= 1; ++a4)
                                for (int a5 = -1; a5 <= 1; ++a5) {
                                    q[0] = p[0] + a0 * rs;
                                    q[1] = p[1] + a1 * rs;
                                    q[2] = p[2] + a2 * rs;
                                    q[3] = p[3] + a3 * ts;
                                    q[4] = p[4] + a4 * ts;
                                    q[5] = p[5] + a5 * ts;
                                    double e = err(q);
                                    if (e < best) {
                                        best = e;
                                        std::copy(q, q + 6, best_q);
                                    }
                                }
            std::copy(best_q, best_q + 6, p);
        }

        // per-parameter coordinate descent with step halving; axes are the 6
        // pose parameters plus the two depth-coupled virtual directions
        double step[6];
        const double rot0 = level == 0 ? 0.02 : (level == 1 ? 0.008 : 0.003);
        const double tr0 = level == 0 ? 0.03 : (level == 1 ? 0.012 : 0.005);
        for (int i = 0; i < 3; ++i) step[i] = rot0;
        for (int i = 3; i < 6; ++i) step[i] = tr0;

        // axis k: components (index, weight); singles then coupled pairs
        // (yaw cancels x-translation at tx = -theta*z, pitch at ty = +theta*z)
        struct Axis {
            int idx[2];
            double w[2];
            int n;
        };
        const Axis axes[10] = {
            {{0, -1}, {1, 0}, 1}, {{1, -1}, {1, 0}, 1}, {{2, -1}, {1, 0}, 1},
            {{3, -1}, {1, 0}, 1}, {{4, -1}, {1, 0}, 1}, {{5, -1}, {1, 0}, 1},
            {{1, 3}, {1, -z_near}, 2},
            {{1, 3}, {1, -z_med}, 2},
            {{0, 4}, {1, z_near}, 2},
            {{0, 4}, {1, z_med}, 2},
        };

        while (iters_used < kMaxDescentIters) {
            bool improved = false;
            for (const Axis& ax : axes) {
                double saved[2] = {p[ax.idx[0]], ax.n > 1 ? p[ax.idx[1]] : 0.0};
                const double s = step[ax.idx[0]];
                for (int sign = 1; sign >= -1; sign -= 2) {
                    for (int c = 0; c < ax.n; ++c) p[ax.idx[c]] = saved[c] + sign * s * ax.w[c];
                    double e = err(p);
                    if (e < best) {
                        best = e;
                        improved = true;
                        break;
                    }
                    for (int c = 0; c < ax.n; ++c) p[ax.idx[c]] = saved[c];
                }
            }
            ++iters_used;
            if (!improved) {
                double max_step = 0;
                for (int i = 0; i < 6; ++i) {
                    step[i] *= 0.5;
                    max_step = std::max(max_step, step[i]);
                }
                if (max_step < kMinStep) {
                    if (level == 2) reached_min_step = true;
                    break;
                }
            }
        }
        est.final_error = best;
    }

    est.pose = apply_delta(init, p);
    est.descent_iterations = iters_used;
    est.converged = reached_min_step || iters_used < kMaxDescentIters;
    return est;
}

TrajErrors trajectory_errors(const Trajectory& est, const Trajectory& gt) {
    if (est.size() != gt.size())
        throw std::invalid_argument("trajectory_errors: length mismatch (" +
                                    std::to_string(est.size()) + " vs " + std::to_string(gt.size()) + ")");
    Sim3 sim = align_sim3(est, gt);

    TrajErrors out;
    double rot_sum = 0, pos_sum = 0;
    for (size_t i = 0; i < est.size(); ++i) {
        // camera orientation in world space after applying the gauge rotation
        Eigen::Matrix3d r_est_wc = sim.rotation * est.poses[i].rotation.transpose();
        Eigen::Matrix3d r_gt_wc = gt.poses[i].rotation.transpose();
        rot_sum += rotation_geodesic_deg(r_est_wc, r_gt_wc);
        pos_sum += (sim.apply(est.poses[i].center()) - gt.poses[i].center()).norm();
    }
    out.r_err_deg = rot_sum / static_cast<double>(est.size());
    double mean_pos = pos_sum / static_cast<double>(est.size());

    double path = 0;
    for (size_t i = 0; i + 1 < gt.size(); ++i)
        path += (gt.poses[i + 1].center() - gt.poses[i].center()).norm();
    if (path > 1e-9) {
        out.t_err = mean_pos / path;
        out.t_err_path_normalized = true;
    } else {
        out.t_err = mean_pos;
        out.t_err_path_normalized = false;
    }
    return out;
}

MetricsReport score_generation(std::span<const Image> generated, std::span<const Image> reference,
                               std::span<const Mask> valid_masks, const Trajectory& est,
                               const Trajectory& commanded) {
    if (generated.size() != reference.size())
        throw std::invalid_argument("score_generation: frame count mismatch");
    MetricsReport m;
    const bool have_masks = valid_masks.size() == generated.size();
    for (size_t i = 0; i < generated.size(); ++i) {
        m.per_frame_psnr.push_back(psnr(generated[i], reference[i]));
        m.per_frame_ssim.push_back(ssim(generated[i], reference[i]));
        if (have_masks) {
            const Mask& mask = valid_masks[i];
            const double frac =
                static_cast<double>(mask.count_set()) / static_cast<double>(mask.data.size());
            if (frac < 0.01) {
                m.per_frame_vis_psnr.push_back(std::nullopt);  // undefined, too few valid pixels
                m.per_frame_vis_ssim.push_back(std::nullopt);
            } else {
                m.per_frame_vis_psnr.push_back(psnr(generated[i], reference[i], &mask));
                m.per_frame_vis_ssim.push_back(ssim(generated[i], reference[i], &mask));
            }
        }
    }

    bool any;
    double v;
    v = mean_or_nan(m.per_frame_psnr, any);
    if (any) m.psnr_db = v;
    v = mean_or_nan(m.per_frame_ssim, any);
    if (any) m.ssim_score = v;
    v = mean_or_nan(m.per_frame_vis_psnr, any);
    if (any) m.vis_psnr_db = v;
    v = mean_or_nan(m.per_frame_vis_ssim, any);
    if (any) m.vis_ssim = v;

    TrajErrors te = trajectory_errors(est, commanded);
    m.r_err_deg = te.r_err_deg;
    m.t_err = te.t_err;
    m.t_err_path_normalized = te.t_err_path_normalized;

    Sim3 sim = align_sim3(est, commanded);
    for (size_t i = 0; i < est.size(); ++i)
        m.per_frame_r_err_deg.push_back(rotation_geodesic_deg(
            sim.rotation * est.poses[i].rotation.transpose(), commanded.poses[i].rotation.transpose()));
    return m;
}

namespace {

nlohmann::json opt_array(const std::vector<std::optional<double>>& values) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : values) {
        if (v) arr.push_back(*v);
        else arr.push_back(nullptr);
    }
    return arr;
}

std::string opt_cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", *v);
    return buf;
}

}  // namespace

std::string MetricsReport::to_json_text() const {
    nlohmann::json j;
    auto put_opt = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
        else j[key] = nullptr;
    };
    put_opt("psnr_db", psnr_db);
    put_opt("ssim", ssim_score);
    put_opt("vis_psnr_db", vis_psnr_db);
    put_opt("vis_ssim", vis_ssim);
    j["r_err_deg"] = r_err_deg;
    j["t_err"] = t_err;
    j["t_err_path_normalized"] = t_err_path_normalized;
    j["per_frame"] = {{"psnr_db", opt_array(per_frame_psnr)},
                      {"ssim", opt_array(per_frame_ssim)},
                      {"vis_psnr_db", opt_array(per_frame_vis_psnr)},
                      {"vis_ssim", opt_array(per_frame_vis_ssim)},
                      {"r_err_deg", per_frame_r_err_deg}};
    return j.dump(2);
}

std::string metrics_csv_header() {
    return "psnr_db,ssim,vis_psnr_db,vis_ssim,r_err_deg,t_err";
}

std::string metrics_csv_row(const MetricsReport& m) {
    char buf[64];
    std::string row;
    row += opt_cell(m.psnr_db);
    row += ',';
    row += opt_cell(m.ssim_score);
    row += ',';
    row += opt_cell(m.vis_psnr_db);
    row += ',';
    row += opt_cell(m.vis_ssim);
    std::snprintf(buf, sizeof(buf), ",%.6g,%.6g", m.r_err_deg, m.t_err);
    row += buf;
    return row;
}

double RuntimeProfile::stage_seconds(const std::string& name) const {
    for (const StageTime& s : stages)
        if (s.stage == name) return s.seconds;
    return 0.0;
}

std::string profile_csv_header() {
    return "regime,stage,seconds,tokens_clean,tokens_warp,tokens_target,total_tokens,visible_fraction";
}

std::string profile_csv_rows(const RuntimeProfile& p) {
    std::string out;
    char buf[256];
    for (const StageTime& s : p.stages) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%d,%d,%d,%d,%.4f\n", p.regime.c_str(),
                      s.stage.c_str(), s.seconds, p.tokens_clean, p.tokens_warp, p.tokens_target,
                      p.total_tokens(), p.visible_fraction);
        out += buf;
    }
    return out;
}

}  // namespace wah
