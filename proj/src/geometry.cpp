#include "skyfall/geometry.hpp"

#include "skyfall/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace skyfall {

Gaussian Gaussian::zero() {
    Gaussian g;
    g.rotation.setZero();
    return g;
}

double Gaussian::opacity() const { return sigmoid(opacity_logit); }

std::string_view param_class_name(ParamClass c) {
    switch (c) {
    case ParamClass::position: return "position";
    case ParamClass::rotation: return "rotation";
    case ParamClass::scale: return "scale";
    case ParamClass::opacity: return "opacity";
    case ParamClass::sh_dc: return "sh_dc";
    case ParamClass::sh_rest: return "sh_rest";
    case ParamClass::appearance_code: return "appearance_code";
    }
    return "unknown";
}

std::span<double> param_span(Gaussian& g, ParamClass c) {
    switch (c) {
    case ParamClass::position: return {g.position.data(), 3};
    case ParamClass::rotation: return {g.rotation.data(), 4};
    case ParamClass::scale: return {g.log_scale.data(), 3};
    case ParamClass::opacity: return {&g.opacity_logit, 1};
    case ParamClass::sh_dc: return {g.sh.data(), 3};
    case ParamClass::sh_rest: return {g.sh.data() + 3, 9};
    case ParamClass::appearance_code: return {g.appearance.data(), kAppearanceCodeDim};
    }
    return {};
}

std::span<const double> param_span(const Gaussian& g, ParamClass c) {
    auto s = param_span(const_cast<Gaussian&>(g), c);
    return {s.data(), s.size()};
}

void CameraPinhole::validate() const {
    const Mat3 should_be_identity = rotation * rotation.transpose();
    if (!should_be_identity.isApprox(Mat3::Identity(), 1e-6) ||
        std::abs(rotation.determinant() - 1.0) > 1e-6) {
        throw ContractError("camera rotation is not a proper orthonormal matrix");
    }
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw ContractError("camera focal lengths must be positive");
    }
    if (!(near > 0.0) || !(near < far)) {
        throw ContractError("camera clip planes must satisfy 0 < near < far");
    }
    if (width <= 0 || height <= 0) {
        throw ContractError("camera image size must be positive");
    }
}

Vec3 CameraPinhole::center() const { return -rotation.transpose() * translation; }

CameraPinhole CameraPinhole::look_at(const Vec3& eye, const Vec3& target, double fov_deg,
                                     int width, int height) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 up(0, 0, 1);
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-12) {
        throw ContractError("look_at: view direction is parallel to the up axis");
    }
    right.normalize();
    const Vec3 down = forward.cross(right);

    CameraPinhole cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    const double half = 0.5 * fov_deg * std::numbers::pi / 180.0;
    cam.fx = 0.5 * width / std::tan(half);
    cam.fy = cam.fx;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    return cam;
}

Mat3 rotation_from_quaternion(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 covariance_from_params(const Vec4& q, const Vec3& log_scale) {
    if (std::abs(q.norm() - 1.0) > 1e-6) {
        throw ParameterDomainError("quaternion norm " + std::to_string(q.norm()) +
                                   " is not 1 within 1e-6");
    }
    const Mat3 m = rotation_from_quaternion(q) * log_scale.array().exp().matrix().asDiagonal();
    return m * m.transpose();
}

std::optional<Projection> project_gaussian(const Vec3& mean, const Mat3& cov,
                                           const CameraPinhole& cam) {
    const Vec3 t = cam.to_camera(mean);
    if (t.z() <= cam.near) {
        return std::nullopt;
    }
    const double inv_z = 1.0 / t.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx * inv_z, 0, -cam.fx * t.x() * inv_z * inv_z,
           0, cam.fy * inv_z, -cam.fy * t.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> jw = jac * cam.rotation;

    Projection p;
    p.mean2d = Vec2(cam.fx * t.x() * inv_z + cam.cx, cam.fy * t.y() * inv_z + cam.cy);
    p.cov2d = jw * cov * jw.transpose();
    p.cov2d(0, 1) = p.cov2d(1, 0) = 0.5 * (p.cov2d(0, 1) + p.cov2d(1, 0));
    p.cov2d(0, 0) += kScreenDilation;
    p.cov2d(1, 1) += kScreenDilation;
    p.depth = t.z();
    return p;
}

Eigen::Vector4d sh_basis(const Vec3& d) {
    return {kShC0, -kShC1 * d.y(), kShC1 * d.z(), -kShC1 * d.x()};
}

Vec3 sh_eval(const ShCoeffs& sh, const Vec3& view_dir) {
    const Eigen::Vector4d basis = sh_basis(view_dir);
    return (sh.transpose() * basis).array() + 0.5;
}

Vec3 sh_dc_color(const ShCoeffs& sh) { return (kShC0 * sh.row(0).transpose()).array() + 0.5; }

} // namespace skyfall
