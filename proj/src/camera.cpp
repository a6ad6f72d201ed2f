#include "wah/camera.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wah {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
constexpr double kRadToDeg = 180.0 / kPi;
}  // namespace

void Intrinsics::validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: non-positive image size");
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (cx < 0 || cx > width) throw std::invalid_argument("intrinsics: cx outside [0, width]");
    if (cy < 0 || cy > height) throw std::invalid_argument("intrinsics: cy outside [0, height]");
}

Intrinsics make_intrinsics(double fx, double fy, double cx, double cy, int width, int height) {
    Intrinsics k{fx, fy, cx, cy, width, height};
    k.validate();
    return k;
}

double orthonormality_error(const Eigen::Matrix3d& r) {
    Eigen::Matrix3d gram = r.transpose() * r - Eigen::Matrix3d::Identity();
    double e = gram.cwiseAbs().maxCoeff();
    return std::max(e, std::abs(r.determinant() - 1.0));
}

Eigen::Matrix3d polar_orthonormalize(const Eigen::Matrix3d& r) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    Eigen::Matrix3d out = u * v.transpose();
    if (out.determinant() < 0) {
        u.col(2) *= -1.0;
        out = u * v.transpose();
    }
    return out;
}

Pose make_pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation) {
    double err = orthonormality_error(rotation);
    Pose p;
    p.translation = translation;
    if (err <= 1e-9) {
        p.rotation = rotation;
    } else if (err <= 1e-3) {
        p.rotation = polar_orthonormalize(rotation);
    } else {
        throw std::invalid_argument("pose: rotation orthonormality error " + std::to_string(err) +
                                    " exceeds 1e-3");
    }
    return p;
}

Eigen::Matrix3d rot_x(double rad) {
    Eigen::Matrix3d m;
    double c = std::cos(rad), s = std::sin(rad);
    m << 1, 0, 0, 0, c, -s, 0, s, c;
    return m;
}

Eigen::Matrix3d rot_y(double rad) {
    Eigen::Matrix3d m;
    double c = std::cos(rad), s = std::sin(rad);
    m << c, 0, s, 0, 1, 0, -s, 0, c;
    return m;
}

Eigen::Matrix3d rot_z(double rad) {
    Eigen::Matrix3d m;
    double c = std::cos(rad), s = std::sin(rad);
    m << c, -s, 0, s, c, 0, 0, 0, 1;
    return m;
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double rad) {
    return Eigen::AngleAxisd(rad, axis.normalized()).toRotationMatrix();
}

Pose compose(const Pose& a, const Pose& b) {
    Eigen::Matrix3d r = a.rotation * b.rotation;
    if (orthonormality_error(r) > 1e-9) r = polar_orthonormalize(r);
    Pose out;
    out.rotation = r;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

Pose inverse(const Pose& p) {
    Pose out;
    out.rotation = p.rotation.transpose();
    out.translation = -(p.rotation.transpose() * p.translation);
    return out;
}

Pose relative_pose(const Pose& world_from_a, const Pose& world_from_b) {
    return compose(inverse(world_from_a), world_from_b);
}

// ---------------------------------------------------------------------------
// Trajectory text format
// ---------------------------------------------------------------------------

Trajectory parse_trajectory_text(std::string_view text, int width, int height) {
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("parse_trajectory_text: image size must be positive");
    Trajectory traj;
    bool have_intrinsics = false;
    int line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;

        size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string_view::npos) continue;
        if (line[first] == '#') continue;

        std::vector<double> fields;
        fields.reserve(19);
        std::istringstream ss{std::string(line)};
        std::string tok;
        int field_no = 0;
        while (ss >> tok) {
            ++field_no;
            if (field_no > 19)
                throw TrajectoryParseError(line_no, field_no, "expected 19 fields, found more");
            try {
                size_t consumed = 0;
                double v = std::stod(tok, &consumed);
                if (consumed != tok.size()) throw std::invalid_argument(tok);
                fields.push_back(v);
            } catch (const std::exception&) {
                throw TrajectoryParseError(line_no, field_no, "not a decimal number: '" + tok + "'");
            }
        }
        if (fields.size() != 19)
            throw TrajectoryParseError(line_no, static_cast<int>(fields.size()) + 1,
                                       "expected 19 fields, found " + std::to_string(fields.size()));

        if (!have_intrinsics) {
            traj.intrinsics = make_intrinsics(fields[1] * width, fields[2] * height,
                                              fields[3] * width, fields[4] * height, width, height);
            have_intrinsics = true;
        }

        Eigen::Matrix3d r;
        Eigen::Vector3d t;
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) r(row, col) = fields[7 + row * 4 + col];
            t(row) = fields[7 + row * 4 + 3];
        }
        if (orthonormality_error(r) > 1e-3)
            throw TrajectoryParseError(line_no, 8, "rotation is not orthonormal within 1e-3");
        traj.poses.push_back(make_pose(r, t));
    }
    if (traj.poses.empty())
        throw TrajectoryParseError(std::max(line_no, 1), 0, "file contains no pose lines");
    return traj;
}

std::string serialize_trajectory_text(const Trajectory& traj) {
    if (traj.poses.empty()) throw std::invalid_argument("serialize_trajectory_text: empty trajectory");
    traj.intrinsics.validate();
    const Intrinsics& k = traj.intrinsics;
    std::string out;
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        out += buf;
        out += ' ';
    };
    for (size_t i = 0; i < traj.poses.size(); ++i) {
        put(static_cast<double>(i));
        put(k.fx / k.width);
        put(k.fy / k.height);
        put(k.cx / k.width);
        put(k.cy / k.height);
        put(0.0);
        put(0.0);
        const Pose& p = traj.poses[i];
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) put(p.rotation(row, col));
            put(p.translation(row));
        }
        out.back() = '\n';
    }
    return out;
}

Trajectory read_trajectory_file(const std::string& path, int width, int height) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open trajectory file " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_trajectory_text(ss.str(), width, height);
}

void write_trajectory_file(const std::string& path, const Trajectory& traj) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open trajectory file for writing " + path);
    os << serialize_trajectory_text(traj);
}

// ---------------------------------------------------------------------------
// Primitive trajectories
// ---------------------------------------------------------------------------

MotionKind motion_kind_from_string(std::string_view s) {
    if (s == "pan_left") return MotionKind::pan_left;
    if (s == "pan_right") return MotionKind::pan_right;
    if (s == "tilt_up") return MotionKind::tilt_up;
    if (s == "tilt_down") return MotionKind::tilt_down;
    if (s == "dolly_in") return MotionKind::dolly_in;
    if (s == "dolly_out") return MotionKind::dolly_out;
    if (s == "truck_left") return MotionKind::truck_left;
    if (s == "truck_right") return MotionKind::truck_right;
    if (s == "orbit") return MotionKind::orbit;
    throw std::invalid_argument("unknown motion kind: " + std::string(s));
}

std::string to_string(MotionKind k) {
    switch (k) {
        case MotionKind::pan_left: return "pan_left";
        case MotionKind::pan_right: return "pan_right";
        case MotionKind::tilt_up: return "tilt_up";
        case MotionKind::tilt_down: return "tilt_down";
        case MotionKind::dolly_in: return "dolly_in";
        case MotionKind::dolly_out: return "dolly_out";
        case MotionKind::truck_left: return "truck_left";
        case MotionKind::truck_right: return "truck_right";
        case MotionKind::orbit: return "orbit";
    }
    throw std::invalid_argument("unknown motion kind enum value");
}

Trajectory make_primitive_trajectory(MotionKind kind, int frames, double magnitude,
                                     const Intrinsics& intrinsics) {
    if (frames < 2) throw std::invalid_argument("primitive trajectory needs at least 2 frames");
    if (!(magnitude > 0)) throw std::invalid_argument("primitive trajectory magnitude must be positive");
    intrinsics.validate();

    Trajectory traj;
    traj.intrinsics = intrinsics;
    traj.poses.reserve(frames);
    constexpr double kOrbitRadius = 2.0;  // pivot 2 world units along +z

    for (int i = 0; i < frames; ++i) {
        double s = static_cast<double>(i) / (frames - 1);  // 0..1, constant velocity
        Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
        Eigen::Vector3d c = Eigen::Vector3d::Zero();  // camera center in world
        double ang = magnitude * kDegToRad * s;
        switch (kind) {
            case MotionKind::pan_left: r = rot_y(ang); break;
            case MotionKind::pan_right: r = rot_y(-ang); break;
            case MotionKind::tilt_up: r = rot_x(-ang); break;
            case MotionKind::tilt_down: r = rot_x(ang); break;
            case MotionKind::dolly_in: c = Eigen::Vector3d(0, 0, magnitude * s); break;
            case MotionKind::dolly_out: c = Eigen::Vector3d(0, 0, -magnitude * s); break;
            case MotionKind::truck_left: c = Eigen::Vector3d(-magnitude * s, 0, 0); break;
            case MotionKind::truck_right: c = Eigen::Vector3d(magnitude * s, 0, 0); break;
            case MotionKind::orbit: {
                // circle around the pivot, keeping it on the optical axis
                Eigen::Vector3d pivot(0, 0, kOrbitRadius);
                r = rot_y(ang);
                c = pivot + r.transpose() * Eigen::Vector3d(0, 0, -kOrbitRadius);
                break;
            }
        }
        Pose p;
        p.rotation = r;
        p.translation = -(r * c);
        traj.poses.push_back(p);
    }
    return traj;
}

double rotation_geodesic_deg(const Eigen::Matrix3d& ra, const Eigen::Matrix3d& rb) {
    // atan2 form of acos((trace - 1)/2): same angle, well conditioned at the
    // ends of [0, pi]
    Eigen::Matrix3d r = ra.transpose() * rb;
    double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    double s = 0.5 * Eigen::Vector3d(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm();
    return std::atan2(s, c) * kRadToDeg;
}

// ---------------------------------------------------------------------------
// Sim(3) alignment (Umeyama)
// ---------------------------------------------------------------------------

Sim3 align_sim3_points(const std::vector<Eigen::Vector3d>& est, const std::vector<Eigen::Vector3d>& gt) {
    if (est.size() != gt.size())
        throw std::invalid_argument("align_sim3: trajectory length mismatch (" +
                                    std::to_string(est.size()) + " vs " + std::to_string(gt.size()) + ")");
    const size_t n = est.size();
    if (n < 3) throw std::invalid_argument("align_sim3: need at least 3 points");

    Eigen::Vector3d mean_est = Eigen::Vector3d::Zero(), mean_gt = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        mean_est += est[i];
        mean_gt += gt[i];
    }
    mean_est /= static_cast<double>(n);
    mean_gt /= static_cast<double>(n);

    double var_est = 0;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < n; ++i) {
        Eigen::Vector3d de = est[i] - mean_est;
        Eigen::Vector3d dg = gt[i] - mean_gt;
        var_est += de.squaredNorm();
        cov += dg * de.transpose();
    }
    var_est /= static_cast<double>(n);
    cov /= static_cast<double>(n);

    Sim3 out;
    if (var_est < 1e-16) {
        // all estimated positions coincide: scale fixed to 1, pure shift
        out.scale = 1.0;
        out.rotation = Eigen::Matrix3d::Identity();
        out.translation = mean_gt - mean_est;
        return out;
    }

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = svd.singularValues();
    Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
    double det_uv = (svd.matrixU() * svd.matrixV().transpose()).determinant();
    if (det_uv < 0) s(2, 2) = -1.0;
    out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
    double trace_ds = d(0) * s(0, 0) + d(1) * s(1, 1) + d(2) * s(2, 2);
    out.scale = trace_ds / var_est;
    if (!(out.scale > 0) || !std::isfinite(out.scale)) out.scale = 1.0;  // degenerate gt spread
    out.translation = mean_gt - out.scale * (out.rotation * mean_est);
    return out;
}

Sim3 align_sim3(const Trajectory& est, const Trajectory& gt) {
    std::vector<Eigen::Vector3d> pe, pg;
    pe.reserve(est.size());
    pg.reserve(gt.size());
    for (const Pose& p : est.poses) pe.push_back(p.center());
    for (const Pose& p : gt.poses) pg.push_back(p.center());
    return align_sim3_points(pe, pg);
}

TrajectoryDiagnostics trajectory_diagnostics(const Trajectory& traj) {
    if (traj.size() < 2) throw std::invalid_argument("trajectory_diagnostics: need at least 2 frames");
    TrajectoryDiagnostics d;
    const auto& poses = traj.poses;

    double rot_sum = 0;
    for (size_t i = 1; i < poses.size(); ++i) {
        double a = rotation_geodesic_deg(poses[0].rotation, poses[i].rotation);
        rot_sum += a;
        d.rot_max_deg = std::max(d.rot_max_deg, a);
    }
    d.rot_mean_deg = rot_sum / static_cast<double>(poses.size() - 1);

    std::vector<Eigen::Vector3d> dirs;
    for (size_t i = 0; i + 1 < poses.size(); ++i) {
        Eigen::Vector3d step = poses[i + 1].center() - poses[i].center();
        double norm = step.norm();
        d.path_length += norm;
        if (norm >= 1e-9) dirs.push_back(step / norm);
    }
    if (dirs.size() >= 2) {
        double sum = 0;
        for (size_t i = 0; i + 1 < dirs.size(); ++i) {
            double c = std::clamp(dirs[i].dot(dirs[i + 1]), -1.0, 1.0);
            sum += std::acos(c) * kRadToDeg;
        }
        d.trans_dir_angle_mean_deg = sum / static_cast<double>(dirs.size() - 1);
    }
    return d;
}

}  // namespace wah
