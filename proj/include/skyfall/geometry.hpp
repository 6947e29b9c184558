#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace skyfall {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kShBases = 4;            // degree 0 and degree 1
inline constexpr int kAppearanceCodeDim = 24; // per-Gaussian code g_i
inline constexpr int kImageEmbeddingDim = 32; // per-image code e_j

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

/// Screen-space dilation added to the diagonal of every projected covariance (px^2).
inline constexpr double kScreenDilation = 0.3;

/// Row b holds basis b for the three colour channels; row 0 is DC.
using ShCoeffs = Eigen::Matrix<double, kShBases, 3, Eigen::RowMajor>;
using AppearanceCode = Eigen::Matrix<double, kAppearanceCodeDim, 1>;

/// One anisotropic 3D Gaussian. The same struct is used as a tangent
/// (gradient / optimizer moment) with identical layout.
struct Gaussian {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0); // (w, x, y, z)
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    ShCoeffs sh = ShCoeffs::Zero();
    AppearanceCode appearance = AppearanceCode::Zero();

    static Gaussian zero();
    double opacity() const;
};

enum class ParamClass { position, rotation, scale, opacity, sh_dc, sh_rest, appearance_code };

inline constexpr ParamClass kAllParamClasses[] = {
    ParamClass::position, ParamClass::rotation, ParamClass::scale,   ParamClass::opacity,
    ParamClass::sh_dc,    ParamClass::sh_rest,  ParamClass::appearance_code};

std::string_view param_class_name(ParamClass c);
std::span<double> param_span(Gaussian& g, ParamClass c);
std::span<const double> param_span(const Gaussian& g, ParamClass c);

struct GaussianCloud {
    std::vector<Gaussian> gaussians;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
};

/// Perspective camera. World-to-camera is x_cam = rotation * x_world + translation;
/// the camera looks down +z, image x grows right and y grows down.
struct CameraPinhole {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    double near = 0.01;
    double far = 1.0e5;

    /// Throws ContractError if any invariant is violated.
    void validate() const;
    Vec3 center() const;
    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }

    /// Camera at `eye` aimed at `target` with world +z as up. Square pixels,
    /// horizontal field of view `fov_deg`, principal point at the image centre.
    static CameraPinhole look_at(const Vec3& eye, const Vec3& target, double fov_deg, int width,
                                 int height);
};

Mat3 rotation_from_quaternion(const Vec4& unit_q);

/// R(q) diag(exp(2 s)) R(q)^T. Throws ParameterDomainError when |q| differs from 1 by more than 1e-6.
Mat3 covariance_from_params(const Vec4& q, const Vec3& log_scale);

struct Projection {
    Vec2 mean2d;
    Mat2 cov2d; // includes kScreenDilation on the diagonal
    double depth;
};

/// EWA projection of a world-space Gaussian. Returns nullopt when the camera-space
/// depth is not beyond the near plane; callers cull such Gaussians.
std::optional<Projection> project_gaussian(const Vec3& mean, const Mat3& cov,
                                           const CameraPinhole& cam);

/// Degree-0/1 SH colour with the +0.5 DC offset. `view_dir` must be unit length.
Vec3 sh_eval(const ShCoeffs& sh, const Vec3& view_dir);

/// Basis values (Y00, Y1-1, Y10, Y11) in the sign convention used by sh_eval.
Eigen::Vector4d sh_basis(const Vec3& view_dir);

/// Colour the DC coefficient alone produces (c0 * Y00 + 0.5).
Vec3 sh_dc_color(const ShCoeffs& sh);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

} // namespace skyfall
