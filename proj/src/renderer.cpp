#include "skyfall/renderer.hpp"

#include "parallel.hpp"
#include "skyfall/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace skyfall {

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Everything computed per surviving Gaussian before rasterization.
struct Splat {
    int index = 0;
    Vec2 mean2d;
    double conic_a = 0, conic_b = 0, conic_c = 0;
    double opacity = 0;
    Vec3 color;       // after clamp
    Vec3 color_pre;   // before clamp
    Vec3 color_sh;    // sh_eval output
    double depth = 0;
    double radius = 0; // 3-sigma, pixels
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0; // inclusive pixel bounds

    // Cached for the backward pass.
    Vec4 q_unit;
    double q_norm = 1;
    Mat3 rot;
    Vec3 scale;
    Mat3 cov3d;
    Vec3 t_cam;
    Mat23 jac;
    Mat2 cov2d;
    Vec3 view_dir;
    double view_dist = 1;
};

/// Gradient slot for one (tile, splat) overlap.
struct OverlapGrad {
    double d_mean[2] = {0, 0};
    double d_conic[3] = {0, 0, 0}; // a, b (single off-diagonal value), c
    double d_opacity = 0;
    double d_color[3] = {0, 0, 0};
    double d_depth = 0;
};

struct Contribution {
    int slot = 0;
    double alpha_hat = 0;
    double gauss = 0;
    double transmittance = 0;
    double dx = 0, dy = 0;
    bool clamped = false;
};

} // namespace

struct Rasterizer::State {
    const GaussianCloud* cloud = nullptr;
    const CameraPinhole* cam = nullptr;
    const AppearanceContext* appearance = nullptr;
    RenderOptions options;

    std::vector<Splat> splats; // sorted by (depth, index)
    AppearanceBatch app_batch;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::size_t> tile_begin; // CSR offsets into tile_entries
    std::vector<int> tile_entries;       // splat positions, ascending (= depth order)
    RenderOutput out;

    int threads() const {
        return options.mode == RenderMode::parallel ? detail::resolve_threads(options.threads) : 1;
    }

    void preprocess();
    void bin_tiles();
    void rasterize();

    template <typename Fn>
    void for_each_contribution(int tile, int px, int py, Fn&& fn) const;
};

namespace {

bool evaluate(const Splat& s, double px, double py, double& dx, double& dy, double& gauss,
              double& alpha_hat, bool& clamped) {
    dx = px - s.mean2d.x();
    dy = py - s.mean2d.y();
    const double maha = s.conic_a * dx * dx + 2.0 * s.conic_b * dx * dy + s.conic_c * dy * dy;
    if (maha > kFootprintCutoff) {
        return false;
    }
    gauss = std::exp(-0.5 * maha);
    const double a = s.opacity * gauss;
    if (a < kAlphaSkip) {
        return false;
    }
    clamped = a > kAlphaClamp;
    alpha_hat = clamped ? kAlphaClamp : a;
    return true;
}

} // namespace

template <typename Fn>
void Rasterizer::State::for_each_contribution(int tile, int px, int py, Fn&& fn) const {
    const double sx = px + 0.5;
    const double sy = py + 0.5;
    double transmittance = 1.0;
    for (std::size_t e = tile_begin[tile]; e < tile_begin[tile + 1]; ++e) {
        const Splat& s = splats[tile_entries[e]];
        if (px < s.x0 || px > s.x1 || py < s.y0 || py > s.y1) {
            continue;
        }
        Contribution c;
        if (!evaluate(s, sx, sy, c.dx, c.dy, c.gauss, c.alpha_hat, c.clamped)) {
            continue;
        }
        c.slot = static_cast<int>(e);
        c.transmittance = transmittance;
        fn(s, c);
        transmittance *= 1.0 - c.alpha_hat;
    }
}

void Rasterizer::State::preprocess() {
    const auto& cam_ref = *cam;
    const Mat3& w = cam_ref.rotation;
    const Vec3 cam_center = cam_ref.center();
    const auto& gs = cloud->gaussians;

    splats.clear();
    splats.reserve(gs.size());
    for (std::size_t i = 0; i < gs.size(); ++i) {
        const Gaussian& g = gs[i];
        Splat s;
        s.index = static_cast<int>(i);
        s.t_cam = cam_ref.to_camera(g.position);
        const double z = s.t_cam.z();
        if (!(z > cam_ref.near) || z > cam_ref.far) {
            continue;
        }
        s.q_norm = g.rotation.norm();
        if (!(s.q_norm > 0.0)) {
            continue;
        }
        s.q_unit = g.rotation / s.q_norm;
        s.rot = rotation_from_quaternion(s.q_unit);
        s.scale = g.log_scale.array().exp();
        const Mat3 m = s.rot * s.scale.asDiagonal();
        s.cov3d = m * m.transpose();

        const double inv_z = 1.0 / z;
        s.jac << cam_ref.fx * inv_z, 0, -cam_ref.fx * s.t_cam.x() * inv_z * inv_z,
                 0, cam_ref.fy * inv_z, -cam_ref.fy * s.t_cam.y() * inv_z * inv_z;
        const Mat23 tw = s.jac * w;
        s.cov2d = tw * s.cov3d * tw.transpose();
        s.cov2d(0, 1) = s.cov2d(1, 0) = 0.5 * (s.cov2d(0, 1) + s.cov2d(1, 0));
        s.cov2d(0, 0) += kScreenDilation;
        s.cov2d(1, 1) += kScreenDilation;
        const double det = s.cov2d.determinant();
        if (!(det > 0.0)) {
            continue;
        }
        s.conic_a = s.cov2d(1, 1) / det;
        s.conic_b = -s.cov2d(0, 1) / det;
        s.conic_c = s.cov2d(0, 0) / det;
        s.mean2d = Vec2(cam_ref.fx * s.t_cam.x() * inv_z + cam_ref.cx,
                        cam_ref.fy * s.t_cam.y() * inv_z + cam_ref.cy);

        const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
        const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
        const double radius = std::sqrt(kFootprintCutoff * lambda_max);
        s.radius = radius;
        // Pixel centres sit at integer + 0.5.
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.x() - radius - 0.5)));
        s.x1 = std::min(cam_ref.width - 1, static_cast<int>(std::floor(s.mean2d.x() + radius - 0.5)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.y() - radius - 0.5)));
        s.y1 = std::min(cam_ref.height - 1, static_cast<int>(std::floor(s.mean2d.y() + radius - 0.5)));
        if (s.x0 > s.x1 || s.y0 > s.y1) {
            continue;
        }

        s.opacity = sigmoid(g.opacity_logit);
        s.depth = z;
        const Vec3 v = g.position - cam_center;
        s.view_dist = v.norm();
        s.view_dir = s.view_dist > 0.0 ? Vec3(v / s.view_dist) : Vec3(0, 0, 1);
        s.color_sh = sh_eval(g.sh, s.view_dir);
        s.color_pre = s.color_sh;
        splats.push_back(s);
    }

    std::stable_sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
        return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
    });

    if (appearance != nullptr && !splats.empty()) {
        const Eigen::Index n = static_cast<Eigen::Index>(splats.size());
        Eigen::MatrixXd codes(kAppearanceCodeDim, n);
        Eigen::MatrixXd dc(3, n);
        for (Eigen::Index k = 0; k < n; ++k) {
            const Gaussian& g = gs[splats[k].index];
            codes.col(k) = g.appearance;
            dc.col(k) = sh_dc_color(g.sh);
        }
        app_batch = appearance_forward(*appearance->model, appearance->embedding, codes, dc);
        for (Eigen::Index k = 0; k < n; ++k) {
            const Vec3 gamma = Vec3::Ones() + app_batch.output.col(k).head<3>();
            const Vec3 beta = app_batch.output.col(k).tail<3>();
            splats[k].color_pre = gamma.cwiseProduct(splats[k].color_sh) + beta;
        }
    }
    for (Splat& s : splats) {
        s.color = s.color_pre.cwiseMax(0.0);
    }
}

void Rasterizer::State::bin_tiles() {
    const int ts = options.tile_size;
    tiles_x = (cam->width + ts - 1) / ts;
    tiles_y = (cam->height + ts - 1) / ts;
    const int tile_count = tiles_x * tiles_y;
    std::vector<std::size_t> counts(tile_count + 1, 0);
    for (const Splat& s : splats) {
        for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty) {
            for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx) {
                ++counts[ty * tiles_x + tx + 1];
            }
        }
    }
    tile_begin.assign(tile_count + 1, 0);
    std::partial_sum(counts.begin(), counts.end(), tile_begin.begin());
    tile_entries.assign(tile_begin.back(), 0);
    std::vector<std::size_t> fill(tile_begin.begin(), tile_begin.end() - 1);
    for (std::size_t k = 0; k < splats.size(); ++k) {
        const Splat& s = splats[k];
        for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty) {
            for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx) {
                tile_entries[fill[ty * tiles_x + tx]++] = static_cast<int>(k);
            }
        }
    }
}

void Rasterizer::State::rasterize() {
    const int w = cam->width, h = cam->height, ts = options.tile_size;
    out.rgb = Image(w, h, 3);
    out.depth = Image(w, h, 1);
    out.alpha = Image(w, h, 1);
    detail::parallel_for(static_cast<std::size_t>(tiles_x) * tiles_y, threads(), [&](std::size_t tile) {
        const int tx = static_cast<int>(tile) % tiles_x;
        const int ty = static_cast<int>(tile) / tiles_x;
        for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
            for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
                double r = 0, g = 0, b = 0, d = 0, a = 0;
                for_each_contribution(static_cast<int>(tile), px, py, [&](const Splat& s, const Contribution& c) {
                    const double weight = c.alpha_hat * c.transmittance;
                    r += weight * s.color.x();
                    g += weight * s.color.y();
                    b += weight * s.color.z();
                    d += weight * s.depth;
                    a += weight;
                });
                out.rgb.at(px, py, 0) = r;
                out.rgb.at(px, py, 1) = g;
                out.rgb.at(px, py, 2) = b;
                out.depth.at(px, py) = d;
                out.alpha.at(px, py) = a;
            }
        }
    });
}

Rasterizer::Rasterizer(const GaussianCloud& cloud, const CameraPinhole& cam,
                       const AppearanceContext* appearance, RenderOptions options)
    : state_(std::make_unique<State>()) {
    cam.validate();
    if (cam.width > options.max_dim || cam.height > options.max_dim) {
        throw ContractError("image size exceeds the configured maximum of " +
                            std::to_string(options.max_dim));
    }
    if (options.tile_size <= 0) {
        throw ContractError("tile size must be positive");
    }
    if (appearance != nullptr && appearance->model == nullptr) {
        throw ContractError("appearance context has no model");
    }
    state_->cloud = &cloud;
    state_->cam = &cam;
    state_->appearance = appearance;
    state_->options = options;
    state_->preprocess();
    state_->bin_tiles();
    state_->rasterize();
}

Rasterizer::~Rasterizer() = default;
Rasterizer::Rasterizer(Rasterizer&&) noexcept = default;
Rasterizer& Rasterizer::operator=(Rasterizer&&) noexcept = default;

const RenderOutput& Rasterizer::output() const { return state_->out; }

std::vector<int> Rasterizer::sorted_visible() const {
    std::vector<int> idx;
    idx.reserve(state_->splats.size());
    for (const Splat& s : state_->splats) {
        idx.push_back(s.index);
    }
    return idx;
}

std::vector<double> Rasterizer::footprint_fraction() const {
    std::vector<double> f(state_->cloud->size(), 0.0);
    const double side = std::max(state_->cam->width, state_->cam->height);
    for (const Splat& s : state_->splats) {
        f[s.index] = s.radius / side;
    }
    return f;
}

RenderUpstream RenderUpstream::zeros(int width, int height) {
    return {Image(width, height, 3), Image(width, height, 1), Image(width, height, 1)};
}

RenderGradients Rasterizer::backward(const RenderUpstream& up) const {
    const State& st = *state_;
    const CameraPinhole& cam = *st.cam;
    const int w = cam.width, h = cam.height, ts = st.options.tile_size;
    if (up.d_rgb.width != w || up.d_rgb.height != h || up.d_rgb.channels != 3 ||
        !up.d_depth.same_shape(st.out.depth) || !up.d_alpha.same_shape(st.out.alpha)) {
        throw ContractError("render_backward: upstream gradient shape does not match the render");
    }

    // Pass 1: per-overlap gradients, each tile written by exactly one worker.
    std::vector<OverlapGrad> slots(st.tile_entries.size());
    detail::parallel_for(static_cast<std::size_t>(st.tiles_x) * st.tiles_y, st.threads(), [&](std::size_t tile) {
        const int tx = static_cast<int>(tile) % st.tiles_x;
        const int ty = static_cast<int>(tile) / st.tiles_x;
        std::vector<std::pair<const Splat*, Contribution>> stack;
        for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
            for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
                const double g[5] = {up.d_rgb.at(px, py, 0), up.d_rgb.at(px, py, 1), up.d_rgb.at(px, py, 2),
                                     up.d_depth.at(px, py), up.d_alpha.at(px, py)};
                if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0 && g[3] == 0.0 && g[4] == 0.0) {
                    continue;
                }
                stack.clear();
                st.for_each_contribution(static_cast<int>(tile), px, py,
                                         [&](const Splat& s, const Contribution& c) { stack.emplace_back(&s, c); });
                // Back to front; `behind` is g . sum_{j>k} w_j f_j.
                double behind = 0.0;
                for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
                    const Splat& s = *it->first;
                    const Contribution& c = it->second;
                    const double weight = c.alpha_hat * c.transmittance;
                    const double gf = g[0] * s.color.x() + g[1] * s.color.y() + g[2] * s.color.z() +
                                      g[3] * s.depth + g[4];
                    OverlapGrad& slot = slots[c.slot];
                    slot.d_color[0] += weight * g[0];
                    slot.d_color[1] += weight * g[1];
                    slot.d_color[2] += weight * g[2];
                    slot.d_depth += weight * g[3];
                    const double d_alpha_hat = c.transmittance * gf - behind / (1.0 - c.alpha_hat);
                    behind += weight * gf;
                    if (c.clamped) {
                        continue;
                    }
                    slot.d_opacity += d_alpha_hat * c.gauss;
                    const double d_power = d_alpha_hat * s.opacity * c.gauss;
                    slot.d_conic[0] += d_power * (-0.5 * c.dx * c.dx);
                    slot.d_conic[1] += d_power * (-c.dx * c.dy);
                    slot.d_conic[2] += d_power * (-0.5 * c.dy * c.dy);
                    slot.d_mean[0] += d_power * (s.conic_a * c.dx + s.conic_b * c.dy);
                    slot.d_mean[1] += d_power * (s.conic_b * c.dx + s.conic_c * c.dy);
                }
            }
        }
    });

    // Pass 2: reduce overlaps per splat in tile order (fixed, thread-count independent).
    const std::size_t n_splats = st.splats.size();
    std::vector<OverlapGrad> per_splat(n_splats);
    for (std::size_t e = 0; e < st.tile_entries.size(); ++e) {
        OverlapGrad& dst = per_splat[st.tile_entries[e]];
        const OverlapGrad& src = slots[e];
        for (int k = 0; k < 2; ++k) dst.d_mean[k] += src.d_mean[k];
        for (int k = 0; k < 3; ++k) dst.d_conic[k] += src.d_conic[k];
        for (int k = 0; k < 3; ++k) dst.d_color[k] += src.d_color[k];
        dst.d_opacity += src.d_opacity;
        dst.d_depth += src.d_depth;
    }

    RenderGradients grads;
    const auto& gs = st.cloud->gaussians;
    grads.d_gaussians.assign(gs.size(), Gaussian::zero());
    grads.mean2d_grad_norm.assign(gs.size(), 0.0);
    grads.visible.assign(gs.size(), 0);

    // d(loss)/d(colour before clamp), columns in splat order.
    Eigen::MatrixXd d_color_pre(3, static_cast<Eigen::Index>(n_splats));
    for (std::size_t k = 0; k < n_splats; ++k) {
        const Splat& s = st.splats[k];
        for (int ch = 0; ch < 3; ++ch) {
            d_color_pre(ch, static_cast<Eigen::Index>(k)) = s.color_pre[ch] > 0.0 ? per_splat[k].d_color[ch] : 0.0;
        }
    }

    Eigen::MatrixXd d_color_sh = d_color_pre;
    if (st.appearance != nullptr) {
        grads.has_appearance = true;
        grads.embedding_index = st.appearance->image_index;
        if (n_splats > 0) {
            Eigen::MatrixXd d_out(AppearanceModel::kOutputDim, static_cast<Eigen::Index>(n_splats));
            for (std::size_t k = 0; k < n_splats; ++k) {
                const auto col = static_cast<Eigen::Index>(k);
                const Vec3 gamma = Vec3::Ones() + st.app_batch.output.col(col).head<3>();
                d_out.col(col).head<3>() = st.splats[k].color_sh.cwiseProduct(d_color_pre.col(col));
                d_out.col(col).tail<3>() = d_color_pre.col(col);
                d_color_sh.col(col) = gamma.cwiseProduct(d_color_pre.col(col));
            }
            AppearanceBackward ab = appearance_backward(*st.appearance->model, st.app_batch, d_out);
            grads.d_embedding = std::move(ab.d_embedding);
            grads.d_mlp_params = std::move(ab.d_mlp_params);
            for (std::size_t k = 0; k < n_splats; ++k) {
                Gaussian& dg = grads.d_gaussians[st.splats[k].index];
                dg.appearance = ab.d_codes.col(static_cast<Eigen::Index>(k));
                dg.sh.row(0) += kShC0 * ab.d_dc_colors.col(static_cast<Eigen::Index>(k)).transpose();
            }
        } else {
            grads.d_embedding = Eigen::VectorXd::Zero(kImageEmbeddingDim);
            grads.d_mlp_params = Eigen::VectorXd::Zero(AppearanceModel::kMlpParamCount);
        }
    }

    const Mat3& wrot = cam.rotation;
    for (std::size_t k = 0; k < n_splats; ++k) {
        const Splat& s = st.splats[k];
        const OverlapGrad& og = per_splat[k];
        const Gaussian& g = gs[s.index];
        Gaussian& dg = grads.d_gaussians[s.index];
        grads.visible[s.index] = 1;
        grads.mean2d_grad_norm[s.index] =
            std::hypot(og.d_mean[0] * 0.5 * w, og.d_mean[1] * 0.5 * h);

        // Colour: SH coefficients and view direction.
        const Vec3 d_c = d_color_sh.col(static_cast<Eigen::Index>(k));
        const Eigen::Vector4d basis = sh_basis(s.view_dir);
        for (int b = 0; b < kShBases; ++b) {
            dg.sh.row(b) += basis[b] * d_c.transpose();
        }
        const Vec3 d_dir(-kShC1 * g.sh.row(3).dot(d_c), -kShC1 * g.sh.row(1).dot(d_c),
                         kShC1 * g.sh.row(2).dot(d_c));
        Vec3 d_pos = (d_dir - s.view_dir * s.view_dir.dot(d_dir)) / s.view_dist;

        dg.opacity_logit = og.d_opacity * s.opacity * (1.0 - s.opacity);

        // Conic -> 2D covariance: dSigma' = -M dM M with M symmetric.
        Mat2 conic;
        conic << s.conic_a, s.conic_b, s.conic_b, s.conic_c;
        Mat2 d_conic;
        d_conic << og.d_conic[0], 0.5 * og.d_conic[1], 0.5 * og.d_conic[1], og.d_conic[2];
        const Mat2 d_cov2d = -conic * d_conic * conic;

        // Sigma' = T Sigma T^T + dilation, T = J W.
        const Mat23 tw = s.jac * wrot;
        const Mat3 d_cov3d = tw.transpose() * d_cov2d * tw;
        const Mat23 d_tw = 2.0 * d_cov2d * tw * s.cov3d;
        const Mat23 d_jac = d_tw * wrot.transpose();

        const double z = s.t_cam.z(), inv_z = 1.0 / z, inv_z2 = inv_z * inv_z, inv_z3 = inv_z2 * inv_z;
        const double tx = s.t_cam.x(), ty = s.t_cam.y();
        Vec3 d_t;
        d_t.x() = -cam.fx * inv_z2 * d_jac(0, 2) + og.d_mean[0] * cam.fx * inv_z;
        d_t.y() = -cam.fy * inv_z2 * d_jac(1, 2) + og.d_mean[1] * cam.fy * inv_z;
        d_t.z() = -cam.fx * inv_z2 * d_jac(0, 0) + 2.0 * cam.fx * tx * inv_z3 * d_jac(0, 2) -
                  cam.fy * inv_z2 * d_jac(1, 1) + 2.0 * cam.fy * ty * inv_z3 * d_jac(1, 2) -
                  og.d_mean[0] * cam.fx * tx * inv_z2 - og.d_mean[1] * cam.fy * ty * inv_z2 + og.d_depth;
        d_pos += wrot.transpose() * d_t;
        dg.position = d_pos;

        // Sigma = M M^T with M = R S.
        const Mat3 m = s.rot * s.scale.asDiagonal();
        const Mat3 d_m = 2.0 * d_cov3d * m;
        const Mat3 rt_dm = s.rot.transpose() * d_m;
        for (int j = 0; j < 3; ++j) {
            dg.log_scale[j] = rt_dm(j, j) * s.scale[j];
        }
        const Mat3 gr = d_m * s.scale.asDiagonal();
        const double qw = s.q_unit[0], qx = s.q_unit[1], qy = s.q_unit[2], qz = s.q_unit[3];
        Vec4 d_qu;
        d_qu[0] = 2 * (-qz * gr(0, 1) + qy * gr(0, 2) + qz * gr(1, 0) - qx * gr(1, 2) - qy * gr(2, 0) + qx * gr(2, 1));
        d_qu[1] = 2 * (qy * gr(0, 1) + qz * gr(0, 2) + qy * gr(1, 0) - 2 * qx * gr(1, 1) - qw * gr(1, 2) +
                       qz * gr(2, 0) + qw * gr(2, 1) - 2 * qx * gr(2, 2));
        d_qu[2] = 2 * (-2 * qy * gr(0, 0) + qx * gr(0, 1) + qw * gr(0, 2) + qx * gr(1, 0) + qz * gr(1, 2) -
                       qw * gr(2, 0) + qz * gr(2, 1) - 2 * qy * gr(2, 2));
        d_qu[3] = 2 * (-2 * qz * gr(0, 0) - qw * gr(0, 1) + qx * gr(0, 2) + qw * gr(1, 0) - 2 * qz * gr(1, 1) +
                       qy * gr(1, 2) + qx * gr(2, 0) + qy * gr(2, 1));
        dg.rotation = (d_qu - s.q_unit * s.q_unit.dot(d_qu)) / s.q_norm;
    }
    return grads;
}

RenderOutput render(const GaussianCloud& cloud, const CameraPinhole& cam,
                    const std::optional<AppearanceContext>& appearance, const RenderOptions& options) {
    Rasterizer r(cloud, cam, appearance ? &*appearance : nullptr, options);
    return r.output();
}

RenderGradients render_backward(const GaussianCloud& cloud, const CameraPinhole& cam,
                                const std::optional<AppearanceContext>& appearance,
                                const RenderUpstream& upstream, const RenderOptions& options) {
    Rasterizer r(cloud, cam, appearance ? &*appearance : nullptr, options);
    return r.backward(upstream);
}

} // namespace skyfall
