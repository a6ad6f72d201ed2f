#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wah {

struct Intrinsics {
    double fx = 0, fy = 0;  // focal lengths, pixels
    double cx = 0, cy = 0;  // principal point, pixels
    int width = 0, height = 0;

    void validate() const;
};

Intrinsics make_intrinsics(double fx, double fy, double cx, double cy, int width, int height);

// Rigid transform stored camera-from-world: x_cam = R * x_world + t.
// world-from-camera is always derived, never stored.
struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static Pose identity() { return Pose{}; }
    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
};

// max(|R^T R - I|_inf, |det R - 1|)
double orthonormality_error(const Eigen::Matrix3d& r);

// Validates the rotation; drift in (1e-9, 1e-3] is repaired by polar
// decomposition, anything larger throws.
Pose make_pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

Eigen::Matrix3d polar_orthonormalize(const Eigen::Matrix3d& r);
Eigen::Matrix3d rot_x(double rad);
Eigen::Matrix3d rot_y(double rad);
Eigen::Matrix3d rot_z(double rad);
Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double rad);

// applying b then a
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);
// a-from-b: compose(world_from_a, result) == world_from_b
Pose relative_pose(const Pose& world_from_a, const Pose& world_from_b);

struct Trajectory {
    std::vector<Pose> poses;
    Intrinsics intrinsics;
    double frame_rate = 30.0;  // informational

    size_t size() const { return poses.size(); }
};

struct TrajectoryParseError : std::runtime_error {
    int line;   // 1-based
    int field;  // 1-based, 0 when the whole line is at fault
    TrajectoryParseError(int line_, int field_, const std::string& msg)
        : std::runtime_error("trajectory parse error at line " + std::to_string(line_) +
                             (field_ > 0 ? ", field " + std::to_string(field_) : "") + ": " + msg),
          line(line_), field(field_) {}
};

// Text format: '#' starts a comment line; each data line has 19 decimal
// fields: timestamp, fx fy cx cy (normalized), 0 0, then a row-major 3x4
// camera-from-world matrix. Intrinsics are denormalized against the given
// image size (fx,cx by width; fy,cy by height).
Trajectory parse_trajectory_text(std::string_view text, int width, int height);
std::string serialize_trajectory_text(const Trajectory& traj);
Trajectory read_trajectory_file(const std::string& path, int width, int height);
void write_trajectory_file(const std::string& path, const Trajectory& traj);

enum class MotionKind {
    pan_left, pan_right, tilt_up, tilt_down,
    dolly_in, dolly_out, truck_left, truck_right, orbit,
};

MotionKind motion_kind_from_string(std::string_view s);
std::string to_string(MotionKind k);

// Pose 0 is identity; motion is evenly interpolated (constant velocity).
// Rotational kinds (pan/tilt/orbit): magnitude is total rotation in degrees.
// Translational kinds (dolly/truck): magnitude is total camera-center
// displacement in world units. Orbit circles a pivot 2 world units ahead.
Trajectory make_primitive_trajectory(MotionKind kind, int frames, double magnitude,
                                     const Intrinsics& intrinsics);

double rotation_geodesic_deg(const Eigen::Matrix3d& ra, const Eigen::Matrix3d& rb);

// Similarity transform p -> scale * rotation * p + translation.
struct Sim3 {
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (rotation * p) + translation; }
};

// Least-squares similarity (Umeyama) aligning est camera centers to gt
// camera centers. Degenerate point sets fix scale to 1.
Sim3 align_sim3(const Trajectory& est, const Trajectory& gt);
Sim3 align_sim3_points(const std::vector<Eigen::Vector3d>& est, const std::vector<Eigen::Vector3d>& gt);

struct TrajectoryDiagnostics {
    double rot_mean_deg = 0;
    double rot_max_deg = 0;
    double trans_dir_angle_mean_deg = 0;
    double path_length = 0;
};

// Rotation stats are geodesic angles between frame 0 and each later frame;
// translation-direction stats are angles between consecutive camera-center
// steps (steps shorter than 1e-9 skipped); path_length sums step norms.
TrajectoryDiagnostics trajectory_diagnostics(const Trajectory& traj);

}  // namespace wah
