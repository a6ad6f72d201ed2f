#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wah/metrics.hpp"
#include "wah/rng.hpp"

using namespace wah;

namespace {

Intrinsics test_intrinsics() { return make_intrinsics(64, 64, 32, 32, 64, 64); }

Image random_image(int w, int h, uint64_t seed) {
    Rng rng(seed);
    Image img(w, h, 3);
    for (float& v : img.data) v = static_cast<float>(rng.next_double());
    return img;
}

}  // namespace

TEST_CASE("psnr: cap, closed form, masks") {
    Image a = random_image(32, 32, 1);
    CHECK(*psnr(a, a) == 99.0);

    // uniform error 0.1 -> 20 dB; the closed form is checked to 1e-9 against
    // the float-rounded error actually stored
    Image c(32, 32, 3), d(32, 32, 3);
    for (size_t i = 0; i < c.data.size(); ++i) {
        c.data[i] = 0.4f;
        d.data[i] = 0.5f;
    }
    double err = static_cast<double>(0.5f) - static_cast<double>(0.4f);
    CHECK(*psnr(c, d) == doctest::Approx(10.0 * std::log10(1.0 / (err * err))).epsilon(1e-9));
    CHECK(*psnr(c, d) == doctest::Approx(20.0).epsilon(1e-5));

    // masked psnr ignores the corrupted half
    Image corrupted = a;
    Mask mask(32, 32, 1);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 16; ++x) {
            corrupted.at(y, x, 0) = 1.0f - corrupted.at(y, x, 0);
            mask.at(y, x) = 0;
        }
    CHECK(*psnr(a, corrupted, &mask) == 99.0);

    Mask empty(32, 32, 0);
    CHECK(!psnr(a, corrupted, &empty).has_value());

    // symmetry and monotonicity in noise amplitude
    CHECK(*psnr(a, corrupted) == *psnr(corrupted, a));
    Rng rng(5);
    double prev = 1e9;
    for (double amp : {0.05, 0.1, 0.2, 0.4}) {
        Image noisy = a;
        for (float& v : noisy.data)
            v = std::clamp(v + static_cast<float>(amp * (rng.next_double() - 0.5)), 0.0f, 1.0f);
        double p = *psnr(a, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim: identity, structural inversion, degenerate variance, masks") {
    Image a = random_image(32, 32, 7);
    CHECK(*ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    // negative image: structure inverts, score drops below 0.5
    Image neg = a;
    for (float& v : neg.data) v = 1.0f - v;
    CHECK(*ssim(a, neg) < 0.5);

    // constant vs constant at a different level: structure term stabilized to
    // 1, luminance term below 1
    Image c1(32, 32, 3), c2(32, 32, 3);
    for (float& v : c1.data) v = 0.3f;
    for (float& v : c2.data) v = 0.6f;
    double s = *ssim(c1, c2);
    CHECK(s < 1.0);
    double expected_luminance = (2 * 0.3 * 0.6 + 1e-4) / (0.3 * 0.3 + 0.6 * 0.6 + 1e-4);
    CHECK(s == doctest::Approx(expected_luminance).epsilon(1e-9));

    CHECK(*ssim(a, neg) == doctest::Approx(*ssim(neg, a)).epsilon(1e-12));

    Mask empty(32, 32, 0);
    CHECK(!ssim(a, neg, &empty).has_value());

    // windows qualify at >= 50% coverage
    Mask half(32, 32, 0);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) half.at(y, x) = x < 16 ? 1 : 0;
    CHECK(ssim(a, a, &half).has_value());
    CHECK(*ssim(a, a, &half) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pose estimator: self-render recovery within 0.1 deg and 1e-3 units") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(901, SpriteMode::force_off);
    Trajectory orbit = make_primitive_trajectory(MotionKind::orbit, 9, 20.0, k);

    const Pose& truth = orbit.poses[4];
    RenderResult r = render(scene, truth, k, 4);
    const Pose& init = orbit.poses[3];  // previous frame, inside the basin

    PoseEstimate est = estimate_pose_photometric(r.frame, scene, k, init, 4);
    CHECK(rotation_geodesic_deg(est.pose.rotation, truth.rotation) < 0.1);
    CHECK((est.pose.center() - truth.center()).norm() < 1e-3);
    CHECK(est.final_error < 1e-5);
}

TEST_CASE("pose estimator: starting at the truth is a fixed point") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(902, SpriteMode::force_off);
    Pose truth = make_primitive_trajectory(MotionKind::pan_left, 5, 10.0, k).poses[2];
    RenderResult r = render(scene, truth, k, 0);

    PoseEstimate est = estimate_pose_photometric(r.frame, scene, k, truth, 0);
    // photometric error at the truth is exactly zero, so no step can improve
    CHECK(est.final_error == 0.0);
    CHECK(rotation_geodesic_deg(est.pose.rotation, truth.rotation) < 1e-9);
    CHECK((est.pose.center() - truth.center()).norm() < 1e-9);
}

TEST_CASE("pose estimator: robust to gaussian noise (sigma 0.01)") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(903, SpriteMode::force_off);
    Trajectory traj = make_primitive_trajectory(MotionKind::truck_left, 5, 0.5, k);
    const Pose& truth = traj.poses[2];
    RenderResult r = render(scene, truth, k, 0);

    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Image noisy = r.frame;
        for (float& v : noisy.data)
            v = std::clamp(v + static_cast<float>(0.01 * rng.next_normal()), 0.0f, 1.0f);
        PoseEstimate est = estimate_pose_photometric(noisy, scene, k, traj.poses[1], 0);
        CHECK(rotation_geodesic_deg(est.pose.rotation, truth.rotation) < 0.5);
    }
}

TEST_CASE("trajectory errors: zero at truth, gauge invariance, perturbation scale") {
    Intrinsics k = test_intrinsics();
    Trajectory gt = make_primitive_trajectory(MotionKind::orbit, 9, 25.0, k);

    TrajErrors zero = trajectory_errors(gt, gt);
    CHECK(zero.r_err_deg < 1e-9);
    CHECK(zero.t_err < 1e-9);

    // any global similarity applied to est is absorbed by the alignment
    Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        double scale = rng.next_range(0.2, 5.0);
        Eigen::Matrix3d q = axis_angle(
            Eigen::Vector3d(rng.next_normal(), rng.next_normal(), rng.next_normal()),
            rng.next_range(-3, 3));
        Eigen::Vector3d shift(rng.next_normal(), rng.next_normal(), rng.next_normal());
        Trajectory est = gt;
        for (Pose& p : est.poses) {
            Eigen::Vector3d center = scale * (q * p.center()) + shift;
            Eigen::Matrix3d r_wc = q * p.rotation.transpose();
            p.rotation = r_wc.transpose();
            p.translation = -(p.rotation * center);
        }
        TrajErrors e = trajectory_errors(est, gt);
        CHECK(e.r_err_deg < 1e-6);
        CHECK(e.t_err < 1e-6);
    }

    // rotations perturbed by 2 degrees about random axes (camera centers
    // preserved) -> r_err ~ 2
    Trajectory wobble = gt;
    for (Pose& p : wobble.poses) {
        Eigen::Vector3d center = p.center();
        Eigen::Vector3d axis(rng.next_normal(), rng.next_normal(), rng.next_normal());
        p.rotation = p.rotation * axis_angle(axis, 2.0 * 3.14159265358979323846 / 180.0);
        p.translation = -(p.rotation * center);
    }
    TrajErrors e = trajectory_errors(wobble, gt);
    CHECK(e.r_err_deg == doctest::Approx(2.0).epsilon(0.1));

    // path-length normalization and the zero-path flag
    Trajectory still;
    still.intrinsics = k;
    still.poses.assign(5, Pose::identity());
    Trajectory off = still;
    for (Pose& p : off.poses) p.translation = Eigen::Vector3d(0.1, 0, 0);
    TrajErrors flat = trajectory_errors(off, still);
    CHECK(!flat.t_err_path_normalized);

    Trajectory shorter = gt;
    shorter.poses.pop_back();
    CHECK_THROWS_AS(trajectory_errors(shorter, gt), std::invalid_argument);
}

TEST_CASE("pose estimator chained over a 33-frame render stays within criterion bounds") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(904, SpriteMode::force_off);
    Trajectory traj = make_primitive_trajectory(MotionKind::orbit, 33, 20.0, k);
    ClipRecord clip = make_clip(scene, traj);

    Trajectory est;
    est.intrinsics = k;
    est.poses.push_back(traj.poses[0]);
    Pose init = traj.poses[0];
    for (int i = 1; i < 33; ++i) {
        PoseEstimate pe = estimate_pose_photometric(clip.frames[i], scene, k, init, i);
        est.poses.push_back(pe.pose);
        init = pe.pose;
    }
    TrajErrors e = trajectory_errors(est, traj);
    CHECK(e.r_err_deg < 0.5);
    CHECK(e.t_err < 0.01);
}

TEST_CASE("score_generation: aggregates, masked variants, undefined markers") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(905, SpriteMode::force_off);
    Trajectory traj = make_primitive_trajectory(MotionKind::pan_right, 4, 8.0, k);
    ClipRecord clip = make_clip(scene, traj);

    std::vector<Image> generated(clip.frames.begin() + 1, clip.frames.end());
    std::vector<Image> reference = generated;
    std::vector<Mask> masks(3, Mask(64, 64, 1));
    masks[2] = Mask(64, 64, 0);  // below the 1% validity floor -> undefined

    Trajectory est;
    est.intrinsics = k;
    est.poses = traj.poses;
    MetricsReport m = score_generation(generated, reference, masks, est, traj);
    CHECK(*m.psnr_db == 99.0);
    CHECK(*m.ssim_score == doctest::Approx(1.0));
    CHECK(m.per_frame_vis_psnr.size() == 3);
    CHECK(m.per_frame_vis_psnr[0].has_value());
    CHECK(!m.per_frame_vis_psnr[2].has_value());
    CHECK(m.r_err_deg < 1e-9);

    std::string json = m.to_json_text();
    CHECK(json.find("per_frame") != std::string::npos);
    CHECK(metrics_csv_header() == "psnr_db,ssim,vis_psnr_db,vis_ssim,r_err_deg,t_err");
}

TEST_CASE("runtime profile rows carry token counts and stages") {
    RuntimeProfile p;
    p.regime = "visible_86";
    p.visible_fraction = 0.86;
    p.tokens_clean = 64;
    p.tokens_warp = 440;
    p.tokens_target = 512;
    p.stages = {{"warp_construction", 0.01},
                {"packing", 0.002},
                {"transformer_sampling", 1.5},
                {"end_to_end", 1.55}};
    CHECK(p.total_tokens() == 1016);
    CHECK(p.stage_seconds("packing") == 0.002);
    std::string rows = profile_csv_rows(p);
    CHECK(std::count(rows.begin(), rows.end(), '\n') == 4);
    CHECK(profile_csv_header().find("visible_fraction") != std::string::npos);
}
