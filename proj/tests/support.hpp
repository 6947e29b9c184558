// Helpers shared by the unit tests and the acceptance runner.
#pragma once

#include "skyfall/appearance.hpp"
#include "skyfall/geometry.hpp"
#include "skyfall/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

namespace skyfall::testing {

struct RandomScene {
    GaussianCloud cloud;
    CameraPinhole camera;
    AppearanceModel appearance;
};

inline Vec4 random_unit_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec4 q(n(rng), n(rng), n(rng), n(rng));
    return q / q.norm();
}

/// Gaussians scattered in front of a camera looking at the origin. The
/// appearance model gets a random output layer so every MLP weight matters.
inline RandomScene random_scene(std::uint64_t seed, int count, int width, int height) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    RandomScene s;
    s.camera = CameraPinhole::look_at(Vec3(0.3 * u(rng), -8.0, 3.0 + u(rng)), Vec3(0, 0, 0), 50.0, width, height);
    for (int i = 0; i < count; ++i) {
        Gaussian g;
        g.position = Vec3(1.5 * u(rng), 1.5 * u(rng), 1.2 * u(rng));
        g.rotation = random_unit_quaternion(rng);
        g.log_scale = Vec3(std::log(0.15 + 0.25 * (u(rng) + 1.0)), std::log(0.15 + 0.25 * (u(rng) + 1.0)),
                           std::log(0.1 + 0.2 * (u(rng) + 1.0)));
        g.opacity_logit = 1.2 * u(rng);
        for (int k = 0; k < kShBases; ++k)
            for (int c = 0; c < 3; ++c) g.sh(k, c) = (k == 0 ? 0.8 : 0.3) * u(rng);
        for (int k = 0; k < kAppearanceCodeDim; ++k) g.appearance[k] = 0.5 * n(rng);
        s.cloud.gaussians.push_back(g);
    }
    s.appearance = AppearanceModel(3, seed + 17);
    auto layers = AppearanceModel::layers_of(s.appearance.mlp_params);
    for (Eigen::Index i = 0; i < layers.w3.size(); ++i) layers.w3.data()[i] = 0.05 * n(rng);
    for (Eigen::Index i = 0; i < layers.b3.size(); ++i) layers.b3.data()[i] = 0.05 * n(rng);
    return s;
}

inline RenderUpstream random_upstream(std::uint64_t seed, int width, int height) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RenderUpstream up = RenderUpstream::zeros(width, height);
    for (double& x : up.d_rgb.data) x = u(rng);
    for (double& x : up.d_depth.data) x = 0.1 * u(rng);
    for (double& x : up.d_alpha.data) x = u(rng);
    return up;
}

/// Linear functional <upstream, render(...)>; its gradient is render_backward(upstream).
inline double probe(const GaussianCloud& cloud, const CameraPinhole& cam, const std::optional<AppearanceContext>& ctx,
                    const RenderUpstream& up) {
    const RenderOutput out = render(cloud, cam, ctx);
    double s = 0.0;
    for (std::size_t i = 0; i < out.rgb.data.size(); ++i) s += up.d_rgb.data[i] * out.rgb.data[i];
    for (std::size_t i = 0; i < out.depth.data.size(); ++i) s += up.d_depth.data[i] * out.depth.data[i];
    for (std::size_t i = 0; i < out.alpha.data.size(); ++i) s += up.d_alpha.data[i] * out.alpha.data[i];
    return s;
}

struct GradCheckResult {
    int checked = 0;
    int passed = 0;
    double worst = 0.0;
    double pass_rate() const { return checked == 0 ? 0.0 : double(passed) / checked; }
};

inline constexpr double kGradRelTol = 1e-3;

/// |a - n| / max(|a|, |n|) <= tol; coordinates whose gradient is below 1e-9 in
/// both estimates must agree to 1e-9 absolutely.
inline bool grad_agrees(double analytic, double numeric, double tol = kGradRelTol) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < 1e-9) return std::abs(analytic - numeric) < 1e-9;
    return std::abs(analytic - numeric) / scale <= tol;
}

/// Central differences on sampled coordinates of Gaussians, the image
/// embedding and the MLP weights.
inline GradCheckResult check_render_gradients(std::uint64_t seed, int count = 40, int size = 32,
                                              int samples = 40, double h = 1e-6) {
    RandomScene s = random_scene(seed, count, size, size);
    const RenderUpstream up = random_upstream(seed + 1, size, size);
    const int image = 1;
    const auto ctx = std::optional<AppearanceContext>(AppearanceContext::for_image(s.appearance, image));
    const RenderGradients g = render_backward(s.cloud, s.camera, ctx, up);

    std::mt19937_64 rng(seed + 2);
    GradCheckResult r;
    auto record = [&](double analytic, double numeric) {
        ++r.checked;
        const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-300});
        const double rel = std::abs(analytic - numeric) / scale;
        if (grad_agrees(analytic, numeric)) {
            ++r.passed;
        } else {
            r.worst = std::max(r.worst, rel);
        }
    };

    std::vector<int> visible;
    for (int i = 0; i < count; ++i)
        if (g.visible[i]) visible.push_back(i);
    if (visible.empty()) return r;
    std::uniform_int_distribution<std::size_t> pick_g(0, visible.size() - 1);
    std::uniform_int_distribution<int> pick_c(0, 6);
    for (int k = 0; k < samples; ++k) {
        const int i = visible[pick_g(rng)];
        const ParamClass c = kAllParamClasses[pick_c(rng)];
        const std::size_t dim = param_span(s.cloud.gaussians[i], c).size();
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, dim - 1)(rng);
        GaussianCloud plus = s.cloud, minus = s.cloud;
        param_span(plus.gaussians[i], c)[j] += h;
        param_span(minus.gaussians[i], c)[j] -= h;
        const double numeric = (probe(plus, s.camera, ctx, up) - probe(minus, s.camera, ctx, up)) / (2 * h);
        record(param_span(g.d_gaussians[i], c)[j], numeric);
    }
    // Appearance pathway: image embedding and MLP weights.
    for (int k = 0; k < samples / 4; ++k) {
        const int j = std::uniform_int_distribution<int>(0, kImageEmbeddingDim - 1)(rng);
        AppearanceModel plus = s.appearance, minus = s.appearance;
        plus.embeddings(image, j) += h;
        minus.embeddings(image, j) -= h;
        const double numeric = (probe(s.cloud, s.camera, AppearanceContext::for_image(plus, image), up) -
                                probe(s.cloud, s.camera, AppearanceContext::for_image(minus, image), up)) /
                               (2 * h);
        record(g.d_embedding[j], numeric);
    }
    for (int k = 0; k < samples / 4; ++k) {
        const Eigen::Index j =
            std::uniform_int_distribution<Eigen::Index>(0, s.appearance.mlp_params.size() - 1)(rng);
        AppearanceModel plus = s.appearance, minus = s.appearance;
        plus.mlp_params[j] += h;
        minus.mlp_params[j] -= h;
        const double numeric = (probe(s.cloud, s.camera, AppearanceContext::for_image(plus, image), up) -
                                probe(s.cloud, s.camera, AppearanceContext::for_image(minus, image), up)) /
                               (2 * h);
        record(g.d_mlp_params[j], numeric);
    }
    return r;
}

struct PixelValue {
    Vec3 rgb = Vec3::Zero();
    double depth = 0.0;
    double alpha = 0.0;
};

// Front-to-back compositing straight from the definitions, one pixel at a time.
inline PixelValue brute_force_pixel(const GaussianCloud& cloud, const CameraPinhole& cam, int px, int py) {
    struct Hit {
        double depth;
        int index;
        double alpha;
        Vec3 color;
    };
    std::vector<Hit> hits;
    const Vec3 eye = cam.center();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian& g = cloud.gaussians[i];
        const Mat3 cov = covariance_from_params(g.rotation, g.log_scale);
        const auto p = project_gaussian(g.position, cov, cam);
        if (!p) continue;
        const Vec2 d = Vec2(px + 0.5, py + 0.5) - p->mean2d;
        const double maha = d.dot(p->cov2d.inverse() * d);
        if (maha > 9.0) continue;
        double a = g.opacity() * std::exp(-0.5 * maha);
        if (a < 1.0 / 255.0) continue;
        a = std::min(a, 0.99);
        const Vec3 dir = (g.position - eye).normalized();
        hits.push_back({p->depth, static_cast<int>(i), a, sh_eval(g.sh, dir).cwiseMax(0.0)});
    }
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
    });
    PixelValue out;
    double t = 1.0;
    for (const Hit& h : hits) {
        out.rgb += t * h.alpha * h.color;
        out.depth += t * h.alpha * h.depth;
        t *= 1.0 - h.alpha;
    }
    out.alpha = 1.0 - t;
    return out;
}

// Up to six Gaussians stacked along the optical axis of a one-pixel camera.
inline GaussianCloud pixel_stack(std::mt19937_64& rng, int count) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GaussianCloud cloud;
    for (int i = 0; i < count; ++i) {
        Gaussian g;
        g.position = Vec3(0.02 * u(rng), 0.02 * u(rng), 3.0 + 2.0 * u(rng));
        g.rotation = random_unit_quaternion(rng);
        g.log_scale = Vec3(-2.5 + 0.5 * u(rng), -2.5 + 0.5 * u(rng), -2.5 + 0.5 * u(rng));
        g.opacity_logit = 3.0 * u(rng);
        for (int k = 0; k < kShBases; ++k)
            for (int c = 0; c < 3; ++c) g.sh(k, c) = 1.5 * u(rng); // some channels clamp at 0
        cloud.gaussians.push_back(g);
    }
    return cloud;
}

inline CameraPinhole one_pixel_camera() {
    CameraPinhole cam;
    cam.fx = cam.fy = 4.0;
    cam.cx = cam.cy = 0.5;
    cam.width = cam.height = 1;
    return cam;
}

} // namespace skyfall::testing
