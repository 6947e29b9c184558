#pragma once

#include "skyfall/geometry.hpp"

#include <random>
#include <string_view>
#include <vector>

namespace skyfall {

struct CurriculumSchedule {
    std::vector<double> elevations_deg; // strictly decreasing
    std::vector<double> radii;          // non-increasing

    int episodes() const { return static_cast<int>(elevations_deg.size()); }
    void validate() const;
};

/// Linear interpolation from start to end, both endpoints included.
/// Requires episodes >= 2, e_start > e_end and r_start >= r_end.
CurriculumSchedule curriculum_schedule(int episodes, double e_start, double e_end, double r_start,
                                       double r_end);

/// Look-at targets on the ground plane z = 0.
struct LookatGrid {
    std::vector<Vec3> points;

    /// rows x cols points spanning `width` units, centred at the origin.
    static LookatGrid grid(int rows, int cols, double width);
    static LookatGrid explicit_points(std::vector<Vec3> points);
};

struct ViewIntrinsics {
    double fov_deg = 20.0;
    int resolution = 2048; // square images
};

/// For each look-at point P and azimuth 2*pi*k/n_views, a camera at
/// P + radius * (cos e cos a, cos e sin a, sin e) aimed at P. Point-major order.
std::vector<CameraPinhole> orbit_views(const LookatGrid& points, double radius, double elevation_deg,
                                       int n_views, const ViewIntrinsics& intrinsics = {});

/// Camera on the orbit sphere of `target`.
CameraPinhole orbit_camera(const Vec3& target, double radius, double elevation_deg, double azimuth_rad,
                           const ViewIntrinsics& intrinsics);

struct PseudoCameraConfig {
    int every = 10;          // iterations between depth-supervision steps
    int count = 24;          // cameras per step
    int resolution = 1024;
    double fov_deg = 20.0;
    double lookat_sigma = 128.0; // standard deviation of look-at x and y
    double elevation_start = 80.0;
    double elevation_end = 45.0;
    double radius_start = 300.0;
    double radius_end = 250.0;
};

/// Elevation (deg) and radius at `iter`, linearly interpolated over [0, total_iters].
std::pair<double, double> pseudo_camera_schedule(const PseudoCameraConfig& cfg, int iter, int total_iters);

struct PseudoCamera {
    CameraPinhole camera;
    Vec3 lookat;
    double elevation_deg;
    double radius;
    double azimuth_rad;
};

std::vector<PseudoCamera> sample_pseudo_cameras(std::mt19937_64& rng, int iter, int total_iters,
                                                const PseudoCameraConfig& cfg = {});

/// Named dataset-update presets.
struct ViewPreset {
    LookatGrid grid;
    int views_per_point = 6;
    int samples_per_view = 2;
    CurriculumSchedule schedule;
};

/// "dfc2019": 3x3 grid 512 wide, elevations 85..45, radii 300..250 over 5 episodes.
/// "googleearth": 16 look-at points at the origin, elevations 85..45, radius 600.
ViewPreset view_preset(std::string_view name);

} // namespace skyfall
