// Benchmark comparing the OpenMP kernels against their serial references and
// the fast forward splat against the quadratic brute-force oracle.

#include <chrono>
#include <cstdio>
#include <omp.h>
#include <vector>

#include "wah/kernels.hpp"
#include "wah/rng.hpp"
#include "wah/scene.hpp"
#include "wah/warp.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        auto t0 = Clock::now();
        fn();
        double s = std::chrono::duration<double>(Clock::now() - t0).count();
        if (s < best) best = s;
    }
    return best;
}

}  // namespace

int main() {
    std::printf("threads available: %d\n\n", omp_get_max_threads());

    // ---- matmul
    {
        const int n = 768, d = 128;
        std::vector<double> a(static_cast<size_t>(n) * d), b(static_cast<size_t>(d) * d),
            c(static_cast<size_t>(n) * d);
        wah::Rng rng(1);
        for (double& v : a) v = rng.next_normal();
        for (double& v : b) v = rng.next_normal();

        double serial = time_of(
            [&] { wah::kernels::matmul_nt_serial(a.data(), d, b.data(), d, c.data(), d, n, d, d); }, 5);
        std::vector<double> c_ref = c;
        double parallel = time_of(
            [&] { wah::kernels::matmul_nt(a.data(), d, b.data(), d, c.data(), d, n, d, d); }, 5);
        bool identical = c == c_ref;
        std::printf("matmul_nt %dx%dx%d: serial %.4fs, openmp %.4fs, speedup %.2fx, bit-identical %s\n",
                    n, d, d, serial, parallel, serial / parallel, identical ? "yes" : "NO");
    }

    // ---- softmax
    {
        const int n = 1024;
        std::vector<double> x(static_cast<size_t>(n) * n), y;
        wah::Rng rng(2);
        for (double& v : x) v = rng.next_normal();
        y = x;
        double serial = time_of([&] {
            y = x;
            wah::kernels::softmax_rows_serial(y.data(), n, n, n);
        }, 5);
        std::vector<double> y_ref = y;
        double parallel = time_of([&] {
            y = x;
            wah::kernels::softmax_rows(y.data(), n, n, n);
        }, 5);
        std::printf("softmax %dx%d:        serial %.4fs, openmp %.4fs, speedup %.2fx, bit-identical %s\n",
                    n, n, serial, parallel, serial / parallel, y == y_ref ? "yes" : "NO");
    }

    // ---- forward splat vs brute-force reference
    {
        wah::Intrinsics intr = wah::make_intrinsics(64, 64, 32, 32, 64, 64);
        wah::Scene scene = wah::generate_scene(42);
        wah::Trajectory traj = wah::make_primitive_trajectory(wah::MotionKind::orbit, 9, 15.0, intr);
        wah::ClipRecord clip = wah::make_clip(scene, traj);
        wah::PointCloud cloud =
            wah::unproject(clip.frames[0], clip.depths[0], intr, clip.trajectory.poses[0]);
        const wah::Pose& target = clip.trajectory.poses[8];

        double fast = time_of([&] { wah::forward_splat(cloud, target, intr); }, 5);
        double brute = time_of([&] { wah::forward_splat_reference(cloud, target, intr); }, 2);
        wah::WarpFrame a = wah::forward_splat(cloud, target, intr);
        wah::WarpFrame b = wah::forward_splat_reference(cloud, target, intr);
        bool identical = a.rgb.data == b.rgb.data && a.valid.data == b.valid.data;
        std::printf("splat 64x64:          fast %.4fs, brute-force %.4fs, ratio %.1fx, bit-identical %s\n",
                    fast, brute, brute / fast, identical ? "yes" : "NO");

        double one_thread = 0, many = 0;
        std::vector<wah::WarpFrame> frames_1, frames_n;
        {
            omp_set_num_threads(1);
            one_thread = time_of([&] { wah::build_warp_video(clip, traj, 0); }, 3);
            wah::WarpVideo wv = wah::build_warp_video(clip, traj, 0);
            for (auto& f : wv.frames) frames_1.push_back(f);
            omp_set_num_threads(omp_get_num_procs());
            many = time_of([&] { wah::build_warp_video(clip, traj, 0); }, 3);
            wv = wah::build_warp_video(clip, traj, 0);
            for (auto& f : wv.frames) frames_n.push_back(f);
        }
        bool same = true;
        for (size_t i = 0; i < frames_1.size(); ++i)
            same &= frames_1[i].rgb.data == frames_n[i].rgb.data &&
                    frames_1[i].valid.data == frames_n[i].valid.data;
        std::printf("warp video 9 frames:  1 thread %.4fs, %d threads %.4fs, speedup %.2fx, bit-identical %s\n",
                    one_thread, omp_get_num_procs(), many, one_thread / many, same ? "yes" : "NO");
    }

    return 0;
}
