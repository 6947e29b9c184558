#include "skyfall/view_sampling.hpp"

#include "skyfall/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace skyfall {

namespace {

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) {
        // Exact endpoints; interior points by the usual affine blend.
        v[i] = i == n - 1 ? b : a + (b - a) * static_cast<double>(i) / (n - 1);
    }
    return v;
}

} // namespace

void CurriculumSchedule::validate() const {
    if (elevations_deg.size() != radii.size()) {
        throw ContractError("curriculum: elevation and radius sequences differ in length");
    }
    for (std::size_t i = 1; i < elevations_deg.size(); ++i) {
        if (!(elevations_deg[i] < elevations_deg[i - 1])) {
            throw ContractError("curriculum: elevations must strictly decrease");
        }
        if (radii[i] > radii[i - 1]) {
            throw ContractError("curriculum: radii must not increase");
        }
    }
}

CurriculumSchedule curriculum_schedule(int episodes, double e_start, double e_end, double r_start,
                                       double r_end) {
    if (episodes < 2) {
        throw ContractError("curriculum: at least two episodes are required");
    }
    if (!(e_start > e_end)) {
        throw ContractError("curriculum: elevation must decrease");
    }
    if (r_start < r_end) {
        throw ContractError("curriculum: radius must not increase");
    }
    CurriculumSchedule s{linspace(e_start, e_end, episodes), linspace(r_start, r_end, episodes)};
    s.validate();
    return s;
}

LookatGrid LookatGrid::grid(int rows, int cols, double width) {
    if (rows < 1 || cols < 1 || width < 0.0) {
        throw ContractError("look-at grid needs positive dimensions");
    }
    LookatGrid g;
    const auto xs = cols == 1 ? std::vector<double>{0.0} : linspace(-0.5 * width, 0.5 * width, cols);
    const auto ys = rows == 1 ? std::vector<double>{0.0} : linspace(-0.5 * width, 0.5 * width, rows);
    for (double y : ys) {
        for (double x : xs) {
            g.points.emplace_back(x, y, 0.0);
        }
    }
    return g;
}

LookatGrid LookatGrid::explicit_points(std::vector<Vec3> points) {
    for (const Vec3& p : points) {
        if (p.z() != 0.0) {
            throw ContractError("look-at points must lie on z = 0");
        }
    }
    return LookatGrid{std::move(points)};
}

CameraPinhole orbit_camera(const Vec3& target, double radius, double elevation_deg, double azimuth_rad,
                           const ViewIntrinsics& intrinsics) {
    if (!(elevation_deg > 0.0) || !(elevation_deg < 90.0)) {
        throw ContractError("orbit elevation must lie strictly between 0 and 90 degrees");
    }
    if (!(radius > 0.0)) {
        throw ContractError("orbit radius must be positive");
    }
    const double e = deg2rad(elevation_deg);
    const Vec3 eye = target + radius * Vec3(std::cos(e) * std::cos(azimuth_rad),
                                            std::cos(e) * std::sin(azimuth_rad), std::sin(e));
    return CameraPinhole::look_at(eye, target, intrinsics.fov_deg, intrinsics.resolution,
                                  intrinsics.resolution);
}

std::vector<CameraPinhole> orbit_views(const LookatGrid& points, double radius, double elevation_deg,
                                       int n_views, const ViewIntrinsics& intrinsics) {
    if (n_views < 1) {
        throw ContractError("orbit_views: need at least one view per point");
    }
    std::vector<CameraPinhole> cams;
    cams.reserve(points.points.size() * n_views);
    for (const Vec3& p : points.points) {
        for (int k = 0; k < n_views; ++k) {
            const double azimuth = 2.0 * std::numbers::pi * k / n_views;
            cams.push_back(orbit_camera(p, radius, elevation_deg, azimuth, intrinsics));
        }
    }
    return cams;
}

std::pair<double, double> pseudo_camera_schedule(const PseudoCameraConfig& cfg, int iter, int total_iters) {
    const double t = total_iters > 0 ? std::clamp(static_cast<double>(iter) / total_iters, 0.0, 1.0) : 0.0;
    if (t == 1.0) {
        return {cfg.elevation_end, cfg.radius_end};
    }
    return {cfg.elevation_start + (cfg.elevation_end - cfg.elevation_start) * t,
            cfg.radius_start + (cfg.radius_end - cfg.radius_start) * t};
}

std::vector<PseudoCamera> sample_pseudo_cameras(std::mt19937_64& rng, int iter, int total_iters,
                                                const PseudoCameraConfig& cfg) {
    std::normal_distribution<double> lookat(0.0, cfg.lookat_sigma);
    std::uniform_real_distribution<double> azimuth(0.0, 2.0 * std::numbers::pi);
    const auto [elevation, radius] = pseudo_camera_schedule(cfg, iter, total_iters);
    const ViewIntrinsics intrinsics{cfg.fov_deg, cfg.resolution};
    std::vector<PseudoCamera> out;
    out.reserve(cfg.count);
    for (int i = 0; i < cfg.count; ++i) {
        PseudoCamera pc;
        const double x = lookat(rng);
        const double y = lookat(rng);
        pc.lookat = Vec3(x, y, 0.0);
        pc.azimuth_rad = azimuth(rng);
        pc.elevation_deg = elevation;
        pc.radius = radius;
        pc.camera = orbit_camera(pc.lookat, radius, elevation, pc.azimuth_rad, intrinsics);
        out.push_back(pc);
    }
    return out;
}

ViewPreset view_preset(std::string_view name) {
    ViewPreset p;
    if (name == "dfc2019") {
        p.grid = LookatGrid::grid(3, 3, 512.0);
        p.schedule = curriculum_schedule(5, 85.0, 45.0, 300.0, 250.0);
    } else if (name == "googleearth") {
        p.grid.points.assign(16, Vec3::Zero());
        p.schedule = curriculum_schedule(5, 85.0, 45.0, 600.0, 600.0);
    } else {
        throw ContractError("unknown view preset '" + std::string(name) + "'");
    }
    return p;
}

} // namespace skyfall
