#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "wah/rng.hpp"
#include "wah/scene.hpp"

using namespace wah;
namespace fs = std::filesystem;

namespace {

Intrinsics test_intrinsics() { return make_intrinsics(64, 64, 32, 32, 64, 64); }

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("wah_scene_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("scene generation is deterministic and satisfies invariants") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Scene a = generate_scene(seed);
        Scene b = generate_scene(seed);
        CHECK(a.layers.size() == b.layers.size());
        for (size_t i = 0; i < a.layers.size(); ++i) {
            CHECK(a.layers[i].depth == b.layers[i].depth);
            CHECK(a.layers[i].texture_seed == b.layers[i].texture_seed);
        }
        CHECK(a.sprite.enabled == b.sprite.enabled);
        a.validate();  // throws on violation
        CHECK(a.layers.size() >= 2);
        CHECK(a.layers.size() <= 6);
        for (size_t i = 1; i < a.layers.size(); ++i) CHECK(a.layers[i].depth > a.layers[i - 1].depth);
        if (a.sprite.enabled) CHECK(a.sprite.depth < a.layers.front().depth);
    }
}

TEST_CASE("render is deterministic and sprite drives the fg mask") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(5, SpriteMode::force_on);
    RenderResult a = render(scene, Pose::identity(), k, 0);
    RenderResult b = render(scene, Pose::identity(), k, 0);
    CHECK(a.frame.data == b.frame.data);
    CHECK(a.depth.data == b.depth.data);
    CHECK(a.fg_mask.data == b.fg_mask.data);

    Scene no_sprite = generate_scene(5, SpriteMode::force_off);
    RenderResult c = render(no_sprite, Pose::identity(), k, 0);
    CHECK(c.fg_mask.count_set() == 0);

    // the sprite sits in front of every layer, so where the mask is set the
    // depth must be the sprite depth
    bool saw_sprite = false;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if (a.fg_mask.at(y, x)) {
                saw_sprite = true;
                CHECK(a.depth.at(y, x) == doctest::Approx(scene.sprite.depth).epsilon(1e-5));
            }
    CHECK(saw_sprite);
}

TEST_CASE("depth unproject-reproject round-trips within half a pixel") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(8, SpriteMode::force_on);
    Pose cam = make_primitive_trajectory(MotionKind::orbit, 9, 20.0, k).poses[4];
    RenderResult r = render(scene, cam, k, 2);

    Pose world_from_cam = inverse(cam);
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        int x = rng.next_int(64), y = rng.next_int(64);
        double d = r.depth.at(y, x);
        REQUIRE(d > 0);
        Eigen::Vector3d pc(d * (x + 0.5 - k.cx) / k.fx, d * (y + 0.5 - k.cy) / k.fy, d);
        Eigen::Vector3d world = world_from_cam.apply(pc);
        Eigen::Vector3d back = cam.apply(world);
        double u = k.fx * back.x() / back.z() + k.cx;
        double v = k.fy * back.y() / back.z() + k.cy;
        CHECK(std::abs(u - (x + 0.5)) < 0.5);
        CHECK(std::abs(v - (y + 0.5)) < 0.5);
    }
}

TEST_CASE("parallax: image displacement decreases with layer depth under pure translation") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(21, SpriteMode::force_off);
    Trajectory truck = make_primitive_trajectory(MotionKind::truck_left, 2, 0.5, k);
    RenderResult r0 = render(scene, truck.poses[0], k, 0);

    // pick one rendered pixel per layer via the stored depth, reproject into
    // the second camera, and compare image displacements
    std::vector<double> displacement;
    for (const SceneLayer& layer : scene.layers) {
        bool found = false;
        for (int y = 8; y < 56 && !found; ++y)
            for (int x = 8; x < 56 && !found; ++x) {
                if (std::abs(r0.depth.at(y, x) - layer.depth) > 1e-4) continue;
                Eigen::Vector3d pc(layer.depth * (x + 0.5 - k.cx) / k.fx,
                                   layer.depth * (y + 0.5 - k.cy) / k.fy, layer.depth);
                Eigen::Vector3d world = inverse(truck.poses[0]).apply(pc);
                Eigen::Vector3d proj = truck.poses[1].apply(world);
                double u = k.fx * proj.x() / proj.z() + k.cx;
                double v = k.fy * proj.y() / proj.z() + k.cy;
                displacement.push_back(std::hypot(u - (x + 0.5), v - (y + 0.5)));
                found = true;
            }
        REQUIRE(found);
    }
    for (size_t i = 1; i < displacement.size(); ++i) CHECK(displacement[i] < displacement[i - 1]);
}

TEST_CASE("make_clip: static trajectory, 33-frame chunk, determinism") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(33, SpriteMode::force_off);

    Trajectory still;
    still.intrinsics = k;
    still.poses.assign(4, Pose::identity());
    ClipRecord clip = make_clip(scene, still);
    for (size_t i = 1; i < clip.size(); ++i) CHECK(clip.frames[i].data == clip.frames[0].data);

    Trajectory t33 = make_primitive_trajectory(MotionKind::pan_left, 33, 12.0, k);
    ClipRecord c33 = make_clip(scene, t33);
    CHECK(c33.size() == 33);

    ClipRecord again = make_clip(scene, t33);
    for (size_t i = 0; i < c33.size(); ++i) {
        CHECK(c33.frames[i].data == again.frames[i].data);
        CHECK(c33.depths[i].data == again.depths[i].data);
    }
}

TEST_CASE("foreground centroid motion separates moving and static sprites") {
    Intrinsics k = test_intrinsics();
    Trajectory still;
    still.intrinsics = k;
    still.poses.assign(8, Pose::identity());

    Scene moving = generate_scene(14, SpriteMode::force_on);
    REQUIRE(moving.sprite.velocity.norm() > 0);
    ClipRecord clip_moving = make_clip(moving, still);

    Scene frozen = moving;
    frozen.sprite.velocity = Eigen::Vector2d::Zero();
    ClipRecord clip_static = make_clip(frozen, still);

    FgStats stats_moving = foreground_stats(clip_moving.fg_masks);
    FgStats stats_static = foreground_stats(clip_static.fg_masks);
    CHECK(stats_moving.motion > stats_static.motion);
    CHECK(stats_static.motion == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(stats_moving.area_mean > 0);
}

TEST_CASE("clip write/read round-trip is exact") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(77, SpriteMode::force_on);
    Trajectory traj = make_primitive_trajectory(MotionKind::dolly_in, 5, 0.5, k);
    ClipRecord clip = make_clip(scene, traj);

    fs::path dir = temp_dir("roundtrip");
    write_clip(clip, dir);
    ClipRecord back = read_clip(dir);

    REQUIRE(back.size() == clip.size());
    CHECK(back.scene_seed == clip.scene_seed);
    for (size_t i = 0; i < clip.size(); ++i) {
        CHECK(back.frames[i].data == clip.frames[i].data);  // frames live on the 8-bit grid
        CHECK(back.fg_masks[i].data == clip.fg_masks[i].data);
        CHECK(back.depths[i].data == clip.depths[i].data);  // float32 payload round-trips exactly
    }
    for (size_t i = 0; i < clip.size(); ++i) {
        CHECK((back.trajectory.poses[i].rotation - clip.trajectory.poses[i].rotation)
                  .cwiseAbs()
                  .maxCoeff() < 1e-7);
    }
    fs::remove_all(dir);
}

TEST_CASE("truncated depth file reports expected and actual byte counts") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(78);
    Trajectory traj = make_primitive_trajectory(MotionKind::dolly_in, 3, 0.5, k);
    ClipRecord clip = make_clip(scene, traj);
    fs::path dir = temp_dir("truncated");
    write_clip(clip, dir);

    fs::resize_file(dir / "depth.wahd", fs::file_size(dir / "depth.wahd") - 100);
    try {
        read_clip(dir);
        FAIL("expected truncation error");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("expected") != std::string::npos);
        CHECK(msg.find("got") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("frames are valid P6 files") {
    Intrinsics k = test_intrinsics();
    Scene scene = generate_scene(79);
    Trajectory traj = make_primitive_trajectory(MotionKind::pan_left, 2, 5.0, k);
    ClipRecord clip = make_clip(scene, traj);
    fs::path dir = temp_dir("p6");
    write_clip(clip, dir);

    std::ifstream is(dir / "frame_000.ppm", std::ios::binary);
    std::string magic, w, h, maxval;
    is >> magic >> w >> h >> maxval;
    CHECK(magic == "P6");
    CHECK(w == "64");
    CHECK(h == "64");
    CHECK(maxval == "255");
    is.get();  // single whitespace after maxval
    std::vector<char> payload(64 * 64 * 3);
    is.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    CHECK(is.gcount() == static_cast<std::streamsize>(payload.size()));
    fs::remove_all(dir);
}

TEST_CASE("depth stack format: magic and header") {
    std::vector<DepthMap> frames(2, DepthMap(4, 3, 1.5f));
    fs::path dir = temp_dir("wahd");
    write_depth_stack(dir / "d.wahd", frames);
    std::ifstream is(dir / "d.wahd", std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    CHECK(std::string(magic, 4) == "WAHD");
    auto u32 = [&] {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        return b[0] | (b[1] << 8) | (b[2] << 16) | (b[3] << 24);
    };
    CHECK(u32() == 4u);
    CHECK(u32() == 3u);
    CHECK(u32() == 2u);
    fs::remove_all(dir);
}

TEST_CASE("value noise is band-limited and seeded") {
    CHECK(value_noise(1, 0.3, 0.7) == value_noise(1, 0.3, 0.7));
    CHECK(value_noise(1, 0.3, 0.7) != value_noise(2, 0.3, 0.7));
    // smoothness: nearby samples stay close
    for (int i = 0; i < 100; ++i) {
        double x = 0.01 * i;
        CHECK(std::abs(value_noise(9, x, 0.5) - value_noise(9, x + 1e-3, 0.5)) < 0.02);
    }
}
