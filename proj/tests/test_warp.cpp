#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <omp.h>

#include "wah/rng.hpp"
#include "wah/warp.hpp"

using namespace wah;
namespace fs = std::filesystem;

namespace {

Intrinsics intr(int size) {
    return make_intrinsics(size, size, size / 2.0, size / 2.0, size, size);
}

bool frames_equal(const WarpFrame& a, const WarpFrame& b) {
    return a.rgb.data == b.rgb.data && a.valid.data == b.valid.data;
}

}  // namespace

TEST_CASE("unproject: pinhole axis and projection round-trip") {
    const Intrinsics k = intr(64);
    Image frame(64, 64, 3);
    DepthMap depth(64, 64, 2.5f);
    PointCloud cloud = unproject(frame, depth, k, Pose::identity());
    REQUIRE(cloud.points.size() == 64u * 64u);

    // the pixel whose center is the principal point maps to (0, 0, d)
    const ColoredPoint& center = cloud.points[31 * 64 + 31];  // pixel (31,31) center = (31.5, 31.5)
    CHECK(center.position.x() == doctest::Approx(-2.5 * 0.5 / 64).epsilon(1e-12));
    Image f2(2, 2, 3);
    DepthMap d2(2, 2, 3.0f);
    Intrinsics k2 = make_intrinsics(2, 2, 0.5, 0.5, 2, 2);
    PointCloud c2 = unproject(f2, d2, k2, Pose::identity());
    CHECK((c2.points[0].position - Eigen::Vector3d(0, 0, 3)).norm() < 1e-12);

    // unproject then project into the same camera returns pixel centers
    Rng rng(4);
    Pose cam;
    cam.rotation = rot_y(0.3);
    cam.translation = Eigen::Vector3d(0.2, -0.1, 0.4);
    for (float& v : depth.data) v = static_cast<float>(rng.next_range(1.0, 6.0));
    PointCloud c3 = unproject(frame, depth, k, cam);
    for (int i = 0; i < 500; ++i) {
        int idx = rng.next_int(64 * 64);
        Eigen::Vector3d pc = cam.apply(c3.points[idx].position);
        double u = k.fx * pc.x() / pc.z() + k.cx;
        double v = k.fy * pc.y() / pc.z() + k.cy;
        CHECK(std::abs(u - (idx % 64 + 0.5)) < 1e-6);
        CHECK(std::abs(v - (idx / 64 + 0.5)) < 1e-6);
    }

    DepthMap bad(64, 64, 0.0f);
    CHECK_THROWS_AS(unproject(frame, bad, k, Pose::identity()), std::invalid_argument);
}

TEST_CASE("unproject displacement matches the analytic homography for a fronto-parallel plane") {
    const Intrinsics k = intr(32);
    Image frame(32, 32, 3);
    const double z = 3.0;
    DepthMap depth(32, 32, static_cast<float>(z));

    Pose rel;  // small rotation + translation
    rel.rotation = rot_y(0.05);
    rel.translation = Eigen::Vector3d(0.1, 0.05, -0.08);

    PointCloud cloud = unproject(frame, depth, k, Pose::identity());
    Eigen::Matrix3d km;
    km << k.fx, 0, k.cx, 0, k.fy, k.cy, 0, 0, 1;
    // plane n^T x = z in the source camera: H = K (R + t n^T / z) K^-1 maps
    // source pixels to target pixels
    Eigen::Matrix3d h =
        km * (rel.rotation + rel.translation * Eigen::Vector3d(0, 0, 1).transpose() / z) *
        km.inverse();

    for (int y = 0; y < 32; y += 5)
        for (int x = 0; x < 32; x += 5) {
            const ColoredPoint& pt = cloud.points[static_cast<size_t>(y) * 32 + x];
            Eigen::Vector3d pc = rel.apply(pt.position);
            double u = k.fx * pc.x() / pc.z() + k.cx;
            double v = k.fy * pc.y() / pc.z() + k.cy;
            Eigen::Vector3d hp = h * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0);
            CHECK(std::abs(u - hp.x() / hp.z()) < 1e-4);
            CHECK(std::abs(v - hp.y() / hp.z()) < 1e-4);
        }
}

TEST_CASE("identity warp is bit-exact and fully valid") {
    const Intrinsics k = intr(64);
    Scene scene = generate_scene(3, SpriteMode::force_on);
    Trajectory orbit = make_primitive_trajectory(MotionKind::orbit, 5, 25.0, k);
    ClipRecord clip = make_clip(scene, orbit);

    for (int src = 0; src < 5; src += 2) {
        PointCloud cloud = unproject(clip.frames[src], clip.depths[src], k, orbit.poses[src]);
        WarpFrame wf = forward_splat(cloud, orbit.poses[src], k);
        CHECK(wf.rgb.data == clip.frames[src].data);
        CHECK(wf.valid.count_set() == wf.valid.data.size());
    }
}

TEST_CASE("z-buffer keeps the nearest point; ties go to the smaller source index") {
    const Intrinsics k = intr(8);
    PointCloud cloud;
    // both points land on the same pixel; depths 2.0 and 1.0
    cloud.points.push_back({Eigen::Vector3d(0.1, 0.1, 2.0), {1.0f, 0.0f, 0.0f}});
    cloud.points.push_back({Eigen::Vector3d(0.05, 0.05, 1.0), {0.0f, 1.0f, 0.0f}});
    WarpFrame wf = forward_splat(cloud, Pose::identity(), k);
    int u = static_cast<int>(std::floor(k.fx * 0.05 / 1.0 + k.cx));
    int v = u;
    CHECK(wf.rgb.at(v, u, 1) == 1.0f);  // depth-1.0 point wins

    // exact tie: same depth, the smaller index keeps the pixel
    PointCloud tie;
    tie.points.push_back({Eigen::Vector3d(0.0, 0.0, 2.0), {1.0f, 0.0f, 0.0f}});
    tie.points.push_back({Eigen::Vector3d(0.0, 0.0, 2.0), {0.0f, 1.0f, 0.0f}});
    WarpFrame wt = forward_splat(tie, Pose::identity(), k);
    CHECK(wt.rgb.at(4, 4, 0) == 1.0f);

    // points behind the camera are discarded
    PointCloud behind;
    behind.points.push_back({Eigen::Vector3d(0, 0, -1.0), {1.0f, 1.0f, 1.0f}});
    WarpFrame wb = forward_splat(behind, Pose::identity(), k);
    CHECK(wb.valid.count_set() == 0);
}

TEST_CASE("splat matches the brute-force oracle bit-exactly over seeded cases") {
    Rng rng(2025);
    for (int trial = 0; trial < 50; ++trial) {
        int size = 16 + 4 * rng.next_int(5);  // 16..32
        const Intrinsics k = intr(size);
        Scene scene = generate_scene(1000 + trial, trial % 2 ? SpriteMode::force_on : SpriteMode::force_off);

        MotionKind kinds[] = {MotionKind::pan_left, MotionKind::dolly_in, MotionKind::truck_right,
                              MotionKind::orbit, MotionKind::tilt_up};
        MotionKind kind = kinds[rng.next_int(5)];
        double mag = kind == MotionKind::dolly_in || kind == MotionKind::truck_right
                         ? rng.next_range(0.2, 0.8)
                         : rng.next_range(5.0, 25.0);
        Trajectory traj = make_primitive_trajectory(kind, 3, mag, k);
        ClipRecord clip = make_clip(scene, traj);

        PointCloud cloud = unproject(clip.frames[0], clip.depths[0], k, traj.poses[0]);
        SplatOptions opts;
        opts.footprint2x2 = trial % 3 == 0;
        const Pose& target = traj.poses[2];
        WarpFrame fast = forward_splat(cloud, target, k, opts);
        WarpFrame brute = forward_splat_reference(cloud, target, k, opts);
        CHECK(frames_equal(fast, brute));
    }
}

TEST_CASE("occlusion: a near plane hides the far plane under identity pose") {
    const Intrinsics k = intr(16);
    PointCloud cloud;
    // far plane first in index order (would win ties, but must lose the z-test)
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            cloud.points.push_back(
                {Eigen::Vector3d(4.0 * (x + 0.5 - 8) / 16, 4.0 * (y + 0.5 - 8) / 16, 4.0),
                 {1.0f, 0.0f, 0.0f}});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            cloud.points.push_back(
                {Eigen::Vector3d(2.0 * (x + 0.5 - 8) / 16, 2.0 * (y + 0.5 - 8) / 16, 2.0),
                 {0.0f, 1.0f, 0.0f}});
    WarpFrame wf = forward_splat(cloud, Pose::identity(), k);
    CHECK(wf.valid.count_set() == wf.valid.data.size());
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            CHECK(wf.rgb.at(y, x, 0) == 0.0f);  // no far-plane colors anywhere
            CHECK(wf.rgb.at(y, x, 1) == 1.0f);
        }
}

TEST_CASE("validity soundness: rgb is exactly zero wherever valid is zero") {
    const Intrinsics k = intr(32);
    Scene scene = generate_scene(12);
    Trajectory traj = make_primitive_trajectory(MotionKind::truck_left, 5, 0.8, k);
    ClipRecord clip = make_clip(scene, traj);
    WarpVideo wv = build_warp_video(clip, traj, 0);
    bool saw_hole = false;
    for (const WarpFrame& f : wv.frames)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                if (!f.valid.at(y, x)) {
                    saw_hole = true;
                    for (int c = 0; c < 3; ++c) CHECK(f.rgb.at(y, x, c) == 0.0f);
                }
    CHECK(saw_hole);
}

TEST_CASE("build_warp_video: constant trajectory, chunk length, thread independence") {
    const Intrinsics k = intr(64);
    Scene scene = generate_scene(9);
    Trajectory pan = make_primitive_trajectory(MotionKind::pan_right, 33, 14.0, k);
    ClipRecord clip = make_clip(scene, pan);

    Trajectory constant;
    constant.intrinsics = k;
    constant.poses.assign(4, pan.poses[0]);
    WarpVideo wv = build_warp_video(clip, constant, 0);
    for (const WarpFrame& f : wv.frames) {
        CHECK(f.rgb.data == clip.frames[0].data);
        CHECK(f.valid.count_set() == f.valid.data.size());
    }

    WarpVideo chunk = build_warp_video(clip, pan, 0);
    CHECK(chunk.size() == 33);

    int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    WarpVideo serial = build_warp_video(clip, pan, 0);
    omp_set_num_threads(saved);
    for (size_t i = 0; i < chunk.size(); ++i) CHECK(frames_equal(chunk.frames[i], serial.frames[i]));

    CHECK_THROWS_AS(build_warp_video(clip, pan, 99), std::invalid_argument);
}

TEST_CASE("dolly-in invisible ratio is nondecreasing for static layered scenes") {
    const Intrinsics k = intr(32);
    for (uint64_t seed = 50; seed < 60; ++seed) {
        Scene scene = generate_scene(seed, SpriteMode::force_off);
        Trajectory dolly = make_primitive_trajectory(MotionKind::dolly_in, 9, 0.8, k);
        ClipRecord clip = make_clip(scene, dolly);
        WarpVideo wv = build_warp_video(clip, dolly, 0);
        double prev = 0;
        for (size_t i = 0; i < wv.size(); ++i) {
            double r = invisible_ratio(wv.frames[i].valid);
            CHECK(r >= prev - 0.01);
            prev = std::max(prev, r);
        }
    }
}

TEST_CASE("invisible ratio endpoints") {
    Mask all_valid(8, 8, 1);
    CHECK(invisible_ratio(all_valid) == 0.0);
    Mask none_valid(8, 8, 0);
    CHECK(invisible_ratio(none_valid) == 1.0);
}

TEST_CASE("source diagnostics: static vs rotation vs dolly clips, csv schema") {
    const Intrinsics k = intr(32);

    Scene scene = generate_scene(71, SpriteMode::force_on);
    Scene frozen = scene;
    frozen.sprite.velocity = Eigen::Vector2d::Zero();
    Trajectory still;
    still.intrinsics = k;
    still.poses.assign(5, Pose::identity());
    SourceDiagnostics d = source_diagnostics(make_clip(frozen, still));
    CHECK(d.inv_ratio_mean == 0.0);
    CHECK(d.inv_ratio_max == 0.0);
    CHECK(d.rot_mean_deg == 0.0);
    CHECK(d.trans_dir_angle_mean_deg == 0.0);
    CHECK(d.fg_motion == 0.0);
    CHECK(d.fg_area_mean > 0.0);

    Scene plain = generate_scene(72, SpriteMode::force_off);
    SourceDiagnostics rot =
        source_diagnostics(make_clip(plain, make_primitive_trajectory(MotionKind::pan_left, 5, 10.0, k)));
    SourceDiagnostics dolly =
        source_diagnostics(make_clip(plain, make_primitive_trajectory(MotionKind::dolly_in, 5, 0.5, k)));
    CHECK(rot.rot_mean_deg > 0.0);
    CHECK(dolly.rot_mean_deg == 0.0);
    CHECK(dolly.inv_ratio_max >= dolly.inv_ratio_mean);

    // column schema matches the sweep table joins
    CHECK(source_diagnostics_csv_header() ==
          "inv_mean,inv_max,rot_mean_deg,rot_max_deg,trans_dir_angle_mean_deg,fg_motion,fg_area_mean");
    std::string row = source_diagnostics_csv_row(rot);
    CHECK(std::count(row.begin(), row.end(), ',') == 6);
}

TEST_CASE("warp video write/read round-trip") {
    const Intrinsics k = intr(32);
    Scene scene = generate_scene(90);
    Trajectory traj = make_primitive_trajectory(MotionKind::orbit, 4, 18.0, k);
    ClipRecord clip = make_clip(scene, traj);
    WarpVideo wv = build_warp_video(clip, traj, 0);

    fs::path dir = fs::temp_directory_path() / "wah_warp_rt";
    fs::remove_all(dir);
    write_warp_video(wv, dir);
    WarpVideo back = read_warp_video(dir);
    REQUIRE(back.size() == wv.size());
    CHECK(back.source_frame_index == 0);
    for (size_t i = 0; i < wv.size(); ++i) {
        CHECK(back.frames[i].rgb.data == wv.frames[i].rgb.data);
        CHECK(back.frames[i].valid.data == wv.frames[i].valid.data);
    }
    fs::remove_all(dir);
}
