#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wah/camera.hpp"
#include "wah/rng.hpp"

using namespace wah;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

Pose random_pose(Rng& rng) {
    Eigen::Vector3d axis(rng.next_normal(), rng.next_normal(), rng.next_normal());
    double angle = rng.next_range(-3.0, 3.0);
    Pose p;
    p.rotation = axis_angle(axis, angle);
    p.translation = Eigen::Vector3d(rng.next_normal(), rng.next_normal(), rng.next_normal());
    return p;
}

double pose_distance(const Pose& a, const Pose& b) {
    return (a.rotation - b.rotation).cwiseAbs().maxCoeff() +
           (a.translation - b.translation).cwiseAbs().maxCoeff();
}

Intrinsics test_intrinsics() { return make_intrinsics(64, 64, 32, 32, 64, 64); }

}  // namespace

TEST_CASE("compose: identity, inverse, closed-form rotation composition") {
    Rng rng(17);
    Pose p = random_pose(rng);
    CHECK(pose_distance(compose(Pose::identity(), p), p) < 1e-12);
    CHECK(pose_distance(compose(p, inverse(p)), Pose::identity()) < 1e-9);

    Pose r30, r60, r90;
    r30.rotation = rot_z(30 * kDeg);
    r60.rotation = rot_z(60 * kDeg);
    r90.rotation = rot_z(90 * kDeg);
    CHECK(pose_distance(compose(r30, r60), r90) < 1e-9);
}

TEST_CASE("inverse: trivial cases and the double-inverse property") {
    CHECK(pose_distance(inverse(Pose::identity()), Pose::identity()) < 1e-15);

    Pose t;
    t.translation = Eigen::Vector3d(1, 2, 3);
    Pose ti = inverse(t);
    CHECK((ti.translation - Eigen::Vector3d(-1, -2, -3)).norm() < 1e-15);

    Rng rng(99);
    for (int i = 0; i < 100; ++i) {
        Pose p = random_pose(rng);
        CHECK(pose_distance(inverse(inverse(p)), p) < 1e-9);
    }
}

TEST_CASE("relative_pose round-trips") {
    Pose id = Pose::identity();
    Rng rng(5);
    Pose p = random_pose(rng);
    CHECK(pose_distance(relative_pose(p, p), id) < 1e-9);

    Pose t;
    t.translation = Eigen::Vector3d(0, 0, 1);
    CHECK(pose_distance(relative_pose(id, t), t) < 1e-15);

    for (int i = 0; i < 50; ++i) {
        Pose a = random_pose(rng), b = random_pose(rng);
        Pose rel = relative_pose(a, b);
        CHECK(pose_distance(compose(a, rel), b) < 1e-9);
    }
}

TEST_CASE("group laws over seeded random poses") {
    Rng rng(123);
    for (int i = 0; i < 100; ++i) {
        Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
        CHECK(pose_distance(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-9);
        CHECK(pose_distance(compose(a, Pose::identity()), a) < 1e-12);
        CHECK(pose_distance(compose(inverse(a), a), Pose::identity()) < 1e-9);
    }
}

TEST_CASE("pose validation repairs small drift and rejects large drift") {
    Rng rng(7);
    Pose p = random_pose(rng);
    Eigen::Matrix3d drifted = p.rotation;
    drifted(0, 0) += 1e-5;  // in the repairable band
    Pose repaired = make_pose(drifted, p.translation);
    CHECK(orthonormality_error(repaired.rotation) < 1e-9);

    Eigen::Matrix3d bad = p.rotation * 1.5;
    CHECK_THROWS_AS(make_pose(bad, p.translation), std::invalid_argument);
}

TEST_CASE("trajectory parser: identity line and intrinsics denormalization") {
    std::string line = "0 0.5 0.5 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 0";
    Trajectory t = parse_trajectory_text(line, 64, 64);
    REQUIRE(t.size() == 1);
    CHECK(pose_distance(t.poses[0], Pose::identity()) < 1e-12);
    CHECK(t.intrinsics.fx == doctest::Approx(32.0));
    CHECK(t.intrinsics.fy == doctest::Approx(32.0));
    CHECK(t.intrinsics.cx == doctest::Approx(32.0));
    CHECK(t.intrinsics.cy == doctest::Approx(32.0));
}

TEST_CASE("trajectory parser: 33-line file, comments, and blank lines") {
    std::string text = "# camera file\n\n";
    for (int i = 0; i < 33; ++i)
        text += std::to_string(i) + " 0.8 0.8 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 " +
                std::to_string(0.01 * i) + "\n";
    Trajectory t = parse_trajectory_text(text, 64, 64);
    CHECK(t.size() == 33);
}

TEST_CASE("trajectory parser: malformed input reports line and field") {
    // bad numeric token at line 2, field 3
    std::string text =
        "0 0.5 0.5 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 0\n"
        "1 0.5 oops 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 0\n";
    try {
        parse_trajectory_text(text, 64, 64);
        FAIL("expected parse error");
    } catch (const TrajectoryParseError& e) {
        CHECK(e.line == 2);
        CHECK(e.field == 3);
    }

    // wrong field count
    try {
        parse_trajectory_text("0 0.5 0.5 0.5 0.5 0 0 1 0 0\n", 64, 64);
        FAIL("expected parse error");
    } catch (const TrajectoryParseError& e) {
        CHECK(e.line == 1);
    }

    // non-orthonormal rotation beyond 1e-3
    CHECK_THROWS_AS(
        parse_trajectory_text("0 0.5 0.5 0.5 0.5 0 0 2 0 0 0 0 2 0 0 0 0 2 0", 64, 64),
        TrajectoryParseError);

    // empty file
    CHECK_THROWS_AS(parse_trajectory_text("# nothing here\n", 64, 64), TrajectoryParseError);
}

TEST_CASE("trajectory serialize/parse round-trip over random trajectories") {
    Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        Trajectory t;
        t.intrinsics = test_intrinsics();
        int frames = 2 + rng.next_int(8);
        for (int i = 0; i < frames; ++i) t.poses.push_back(random_pose(rng));

        std::string text = serialize_trajectory_text(t);
        Trajectory u = parse_trajectory_text(text, 64, 64);
        REQUIRE(u.size() == t.size());
        CHECK(std::abs(u.intrinsics.fx - t.intrinsics.fx) < 1e-6);
        for (size_t i = 0; i < t.size(); ++i) CHECK(pose_distance(u.poses[i], t.poses[i]) < 1e-6);

        // same structure modulo decimal formatting
        Trajectory v = parse_trajectory_text(serialize_trajectory_text(u), 64, 64);
        for (size_t i = 0; i < t.size(); ++i) CHECK(pose_distance(v.poses[i], u.poses[i]) < 1e-9);
    }
}

TEST_CASE("primitive trajectories: dolly, pan, counts, errors") {
    Intrinsics k = test_intrinsics();

    Trajectory dolly = make_primitive_trajectory(MotionKind::dolly_in, 33, 1.0, k);
    CHECK(dolly.size() == 33);
    CHECK(pose_distance(dolly.poses[0], Pose::identity()) < 1e-15);
    // camera-forward convention: the camera center ends 1 unit along +z
    CHECK((dolly.poses[32].center() - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
    CHECK(rotation_geodesic_deg(dolly.poses[32].rotation, Eigen::Matrix3d::Identity()) < 1e-12);

    Trajectory pan = make_primitive_trajectory(MotionKind::pan_left, 2, 10.0, k);
    Pose rel = relative_pose(pan.poses[0], pan.poses[1]);
    CHECK(rotation_geodesic_deg(rel.rotation, rot_y(10 * kDeg)) < 1e-9);

    for (MotionKind kind : {MotionKind::pan_right, MotionKind::tilt_up, MotionKind::tilt_down,
                            MotionKind::dolly_out, MotionKind::truck_left, MotionKind::truck_right,
                            MotionKind::orbit}) {
        Trajectory t = make_primitive_trajectory(kind, 33, 5.0, k);
        CHECK(t.size() == 33);
        CHECK(pose_distance(t.poses[0], Pose::identity()) < 1e-12);
    }

    CHECK_THROWS_AS(motion_kind_from_string("zoom"), std::invalid_argument);
    CHECK_THROWS_AS(make_primitive_trajectory(MotionKind::orbit, 1, 5.0, k), std::invalid_argument);
    CHECK_THROWS_AS(make_primitive_trajectory(MotionKind::orbit, 10, -1.0, k), std::invalid_argument);
}

TEST_CASE("primitive trajectories interpolate evenly") {
    Intrinsics k = test_intrinsics();
    Trajectory t = make_primitive_trajectory(MotionKind::pan_left, 11, 20.0, k);
    for (int i = 0; i + 1 < 11; ++i) {
        double step = rotation_geodesic_deg(t.poses[i].rotation, t.poses[i + 1].rotation);
        CHECK(step == doctest::Approx(2.0).epsilon(1e-9));
    }
    Trajectory d = make_primitive_trajectory(MotionKind::truck_left, 11, 1.0, k);
    for (int i = 0; i + 1 < 11; ++i)
        CHECK((d.poses[i + 1].center() - d.poses[i].center()).norm() == doctest::Approx(0.1));
}

TEST_CASE("rotation geodesic: exact on axis-angle constructions") {
    CHECK(rotation_geodesic_deg(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity()) == 0.0);
    CHECK(rotation_geodesic_deg(Eigen::Matrix3d::Identity(), rot_x(90 * kDeg)) ==
          doctest::Approx(90.0).epsilon(1e-9));

    Rng rng(31);
    for (double theta : {1.0, 17.0, 123.0}) {
        Pose base = random_pose(rng);
        Eigen::Vector3d axis(rng.next_normal(), rng.next_normal(), rng.next_normal());
        Eigen::Matrix3d rotated = base.rotation * axis_angle(axis, theta * kDeg);
        CHECK(rotation_geodesic_deg(base.rotation, rotated) == doctest::Approx(theta).epsilon(1e-6));
        CHECK(rotation_geodesic_deg(rotated, base.rotation) ==
              doctest::Approx(rotation_geodesic_deg(base.rotation, rotated)).epsilon(1e-12));
    }
}

TEST_CASE("rotation geodesic satisfies the triangle inequality") {
    Rng rng(77);
    for (int i = 0; i < 100; ++i) {
        Eigen::Matrix3d a = random_pose(rng).rotation;
        Eigen::Matrix3d b = random_pose(rng).rotation;
        Eigen::Matrix3d c = random_pose(rng).rotation;
        CHECK(rotation_geodesic_deg(a, c) <=
              rotation_geodesic_deg(a, b) + rotation_geodesic_deg(b, c) + 1e-6);
    }
}

TEST_CASE("align_sim3: trivial, synthetic similarity, noise property") {
    Intrinsics k = test_intrinsics();
    Trajectory gt = make_primitive_trajectory(MotionKind::orbit, 9, 30.0, k);

    Sim3 id = align_sim3(gt, gt);
    CHECK(id.scale == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((id.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(id.translation.norm() < 1e-9);

    // est positions = 2 * rotZ(45 deg) * gt positions -> recover 0.5 and rotZ(-45)
    Rng rng(11);
    for (double scale : {0.1, 0.5, 2.0, 10.0}) {
        Eigen::Matrix3d q = axis_angle(Eigen::Vector3d(rng.next_normal(), rng.next_normal(),
                                                       rng.next_normal()), rng.next_range(-3, 3));
        Eigen::Vector3d shift(rng.next_normal(), rng.next_normal(), rng.next_normal());
        Trajectory est = gt;
        for (Pose& p : est.poses) {
            Eigen::Vector3d center = scale * (q * p.center()) + shift;
            p.rotation = p.rotation;  // orientation untouched; alignment uses positions
            p.translation = -(p.rotation * center);
        }
        Sim3 sim = align_sim3(est, gt);
        CHECK(sim.scale == doctest::Approx(1.0 / scale).epsilon(1e-6));
        for (size_t i = 0; i < gt.size(); ++i)
            CHECK((sim.apply(est.poses[i].center()) - gt.poses[i].center()).norm() < 1e-6);
    }

    // alignment never increases RMS position error
    for (int trial = 0; trial < 20; ++trial) {
        Trajectory est = gt;
        double before = 0;
        for (Pose& p : est.poses) {
            Eigen::Vector3d center = p.center() + 1e-3 * Eigen::Vector3d(rng.next_normal(),
                                                                         rng.next_normal(),
                                                                         rng.next_normal());
            p.translation = -(p.rotation * center);
        }
        for (size_t i = 0; i < gt.size(); ++i)
            before += (est.poses[i].center() - gt.poses[i].center()).squaredNorm();
        Sim3 sim = align_sim3(est, gt);
        double after = 0;
        for (size_t i = 0; i < gt.size(); ++i)
            after += (sim.apply(est.poses[i].center()) - gt.poses[i].center()).squaredNorm();
        CHECK(after <= before + 1e-15);
    }

    Trajectory shorter = gt;
    shorter.poses.pop_back();
    CHECK_THROWS_AS(align_sim3(shorter, gt), std::invalid_argument);
}

TEST_CASE("align_sim3 fixes scale to 1 for coincident point sets") {
    Trajectory still;
    still.intrinsics = test_intrinsics();
    still.poses.assign(5, Pose::identity());
    Trajectory target = still;
    for (Pose& p : target.poses) p.translation = Eigen::Vector3d(1, 2, 3);
    Sim3 sim = align_sim3(still, target);
    CHECK(sim.scale == 1.0);
}

TEST_CASE("trajectory diagnostics") {
    Intrinsics k = test_intrinsics();

    Trajectory still;
    still.intrinsics = k;
    still.poses.assign(5, Pose::identity());
    TrajectoryDiagnostics d = trajectory_diagnostics(still);
    CHECK(d.rot_mean_deg == 0.0);
    CHECK(d.rot_max_deg == 0.0);
    CHECK(d.trans_dir_angle_mean_deg == 0.0);
    CHECK(d.path_length == 0.0);

    Trajectory dolly = make_primitive_trajectory(MotionKind::dolly_in, 33, 1.0, k);
    d = trajectory_diagnostics(dolly);
    CHECK(d.rot_mean_deg < 1e-12);
    CHECK(d.trans_dir_angle_mean_deg < 1e-9);
    CHECK(d.path_length == doctest::Approx(1.0).epsilon(1e-9));

    Trajectory pan = make_primitive_trajectory(MotionKind::pan_left, 33, 16.0, k);
    d = trajectory_diagnostics(pan);
    CHECK(d.rot_max_deg == doctest::Approx(16.0).epsilon(1e-9));
    // even spacing: mean over frames 1..32 of 0.5*i degrees = 8.25
    CHECK(d.rot_mean_deg == doctest::Approx(8.25).epsilon(1e-6));
    CHECK(d.rot_max_deg >= d.rot_mean_deg);
}
