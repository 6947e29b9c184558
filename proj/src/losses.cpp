#include "skyfall/losses.hpp"

#include "skyfall/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace skyfall {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ContractError(std::string(what) + ": image dimensions differ");
    }
    if (a.data.empty()) {
        throw ContractError(std::string(what) + ": empty image");
    }
}

std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> w{};
    const int half = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - half;
        w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) {
        v /= sum;
    }
    return w;
}

/// Separable Gaussian filter of one plane, zero padded, same size. Self-adjoint.
std::vector<double> blur(const std::vector<double>& plane, int w, int h) {
    static const auto win = gaussian_window();
    const int half = kSsimWindow / 2;
    std::vector<double> tmp(plane.size(), 0.0), out(plane.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -half; k <= half; ++k) {
                const int xx = x + k;
                if (xx >= 0 && xx < w) {
                    s += win[k + half] * plane[static_cast<std::size_t>(y) * w + xx];
                }
            }
            tmp[static_cast<std::size_t>(y) * w + x] = s;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -half; k <= half; ++k) {
                const int yy = y + k;
                if (yy >= 0 && yy < h) {
                    s += win[k + half] * tmp[static_cast<std::size_t>(yy) * w + x];
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = s;
        }
    }
    return out;
}

std::vector<double> channel_plane(const Image& img, int c) {
    std::vector<double> p(img.pixel_count());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = img.data[i * img.channels + c];
    }
    return p;
}

ImageLoss ssim_impl(const Image& x, const Image& y, bool want_grad) {
    require_same_shape(x, y, "ssim");
    constexpr double c1 = kSsimK1 * kSsimK1;
    constexpr double c2 = kSsimK2 * kSsimK2;
    const int w = x.width, h = x.height;
    const std::size_t n = x.pixel_count();
    const double norm = 1.0 / static_cast<double>(n * x.channels);

    ImageLoss result;
    if (want_grad) {
        result.grad = Image(w, h, x.channels);
    }
    double total = 0.0;
    for (int c = 0; c < x.channels; ++c) {
        const auto px = channel_plane(x, c);
        const auto py = channel_plane(y, c);
        std::vector<double> xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            xx[i] = px[i] * px[i];
            yy[i] = py[i] * py[i];
            xy[i] = px[i] * py[i];
        }
        const auto mu_x = blur(px, w, h), mu_y = blur(py, w, h);
        const auto m_xx = blur(xx, w, h), m_yy = blur(yy, w, h), m_xy = blur(xy, w, h);

        std::vector<double> g_mu, g_m2, g_m12;
        if (want_grad) {
            g_mu.resize(n);
            g_m2.resize(n);
            g_m12.resize(n);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double mx = mu_x[i], my = mu_y[i];
            const double var_x = m_xx[i] - mx * mx;
            const double var_y = m_yy[i] - my * my;
            const double cov = m_xy[i] - mx * my;
            const double a1 = 2.0 * mx * my + c1, a2 = 2.0 * cov + c2;
            const double b1 = mx * mx + my * my + c1, b2 = var_x + var_y + c2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (want_grad) {
                const double gs = norm;
                g_mu[i] = gs * s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
                g_m2[i] = gs * (-s / b2);
                g_m12[i] = gs * (2.0 * s / a2);
            }
        }
        if (want_grad) {
            const auto b_mu = blur(g_mu, w, h), b_m2 = blur(g_m2, w, h), b_m12 = blur(g_m12, w, h);
            for (std::size_t i = 0; i < n; ++i) {
                result.grad.data[i * x.channels + c] = b_mu[i] + 2.0 * px[i] * b_m2[i] + py[i] * b_m12[i];
            }
        }
    }
    result.value = total * norm;
    return result;
}

std::size_t valid_count(const Image& a, const Mask* mask) {
    if (mask == nullptr || mask->empty()) {
        return a.pixel_count();
    }
    return static_cast<std::size_t>(std::count_if(mask->begin(), mask->end(), [](auto m) { return m != 0; }));
}

void require_depth_pair(const Image& a, const Image& b, const Mask* mask, const char* what) {
    require_same_shape(a, b, what);
    if (a.channels != 1) {
        throw ContractError(std::string(what) + ": depth maps must be single-channel");
    }
    if (mask != nullptr && !mask->empty() && mask->size() != a.pixel_count()) {
        throw ContractError(std::string(what) + ": mask size does not match the depth map");
    }
}

} // namespace

void LossWeights::validate() const {
    if (lambda_dssim < 0.0 || lambda_dssim > 1.0) {
        throw ContractError("lambda_dssim must lie in [0,1]");
    }
    if (lambda_op < 0.0 || lambda_depth < 0.0) {
        throw ContractError("loss weights must be non-negative");
    }
}

DepthLossMode parse_depth_loss_mode(std::string_view name) {
    if (name == "one_minus_pcorr") return DepthLossMode::one_minus_pcorr;
    if (name == "one_minus_abs") return DepthLossMode::one_minus_abs;
    throw ContractError("unknown depth_loss mode '" + std::string(name) + "'");
}

std::string_view depth_loss_mode_name(DepthLossMode mode) {
    return mode == DepthLossMode::one_minus_abs ? "one_minus_abs" : "one_minus_pcorr";
}

double ssim(const Image& pred, const Image& target) { return ssim_impl(pred, target, false).value; }

ImageLoss ssim_with_grad(const Image& pred, const Image& target) { return ssim_impl(pred, target, true); }

double psnr(const Image& pred, const Image& target) {
    require_same_shape(pred, target, "psnr");
    double sse = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(pred.data.size());
    if (mse < 1e-10) {
        return 99.0;
    }
    return 10.0 * std::log10(1.0 / mse);
}

double loss_color(const Image& pred, const Image& target, double lambda_dssim) {
    require_same_shape(pred, target, "loss_color");
    double l1 = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        l1 += std::abs(pred.data[i] - target.data[i]);
    }
    l1 /= static_cast<double>(pred.data.size());
    if (lambda_dssim == 0.0) {
        return l1;
    }
    const double dssim = 0.5 * (1.0 - ssim(pred, target));
    return lambda_dssim * dssim + (1.0 - lambda_dssim) * l1;
}

ImageLoss loss_color_with_grad(const Image& pred, const Image& target, double lambda_dssim) {
    require_same_shape(pred, target, "loss_color");
    const double inv_n = 1.0 / static_cast<double>(pred.data.size());
    ImageLoss out;
    out.grad = Image(pred.width, pred.height, pred.channels);
    double l1 = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        l1 += std::abs(d);
        out.grad.data[i] = (1.0 - lambda_dssim) * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    l1 *= inv_n;
    out.value = (1.0 - lambda_dssim) * l1;
    if (lambda_dssim != 0.0) {
        const ImageLoss s = ssim_with_grad(pred, target);
        out.value += lambda_dssim * 0.5 * (1.0 - s.value);
        for (std::size_t i = 0; i < out.grad.data.size(); ++i) {
            out.grad.data[i] -= lambda_dssim * 0.5 * s.grad.data[i];
        }
    }
    return out;
}

double opacity_entropy(std::span<const double> alphas) {
    if (alphas.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (double a : alphas) {
        a = std::clamp(a, kEntropyEps, 1.0 - kEntropyEps);
        sum -= a * std::log(a) + (1.0 - a) * std::log(1.0 - a);
    }
    return sum / static_cast<double>(alphas.size());
}

std::vector<double> opacity_entropy_grad_logits(const GaussianCloud& cloud, double* value) {
    std::vector<double> grad(cloud.size(), 0.0);
    double sum = 0.0;
    const double inv_n = cloud.empty() ? 0.0 : 1.0 / static_cast<double>(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double raw = cloud.gaussians[i].opacity();
        const double a = std::clamp(raw, kEntropyEps, 1.0 - kEntropyEps);
        sum -= a * std::log(a) + (1.0 - a) * std::log(1.0 - a);
        if (raw == a) {
            grad[i] = inv_n * std::log((1.0 - a) / a) * a * (1.0 - a);
        }
    }
    if (value != nullptr) {
        *value = sum * inv_n;
    }
    return grad;
}

ImageLoss pearson_with_grad(const Image& a, const Image& b, const Mask* mask) {
    require_depth_pair(a, b, mask, "pearson");
    const std::size_t n = valid_count(a, mask);
    if (n < 2) {
        throw ContractError("pearson: fewer than two valid pixels");
    }
    const bool all = mask == nullptr || mask->empty();
    auto valid = [&](std::size_t i) { return all || (*mask)[i] != 0; };

    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (valid(i)) {
            mean_a += a.data[i];
            mean_b += b.data[i];
        }
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);
    double var_a = 0.0, var_b = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (valid(i)) {
            const double da = a.data[i] - mean_a, db = b.data[i] - mean_b;
            var_a += da * da;
            var_b += db * db;
            cov += da * db;
        }
    }
    var_a /= static_cast<double>(n);
    var_b /= static_cast<double>(n);
    cov /= static_cast<double>(n);

    ImageLoss out;
    out.grad = Image(a.width, a.height, 1);
    if (var_a == 0.0 || var_b == 0.0) {
        out.value = 0.0;
        return out;
    }
    const double raw_denom = std::sqrt(var_a * var_b);
    const bool floored = raw_denom < kPearsonEps;
    const double denom = floored ? kPearsonEps : raw_denom;
    const double r = cov / denom;
    out.value = std::clamp(r, -1.0, 1.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (!valid(i)) {
            continue;
        }
        const double da = a.data[i] - mean_a, db = b.data[i] - mean_b;
        out.grad.data[i] = db * inv_n / denom - (floored ? 0.0 : r * da * inv_n / var_a);
    }
    return out;
}

double pearson(const Image& a, const Image& b, const Mask* mask) { return pearson_with_grad(a, b, mask).value; }

Mask depth_mask_from_alpha(const Image& alpha) {
    Mask m(alpha.pixel_count());
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = alpha.data[i * alpha.channels] >= kDepthMaskAlpha ? 1 : 0;
    }
    return m;
}

ImageLoss loss_depth_with_grad(const Image& depth_gs, const Image& depth_est, const Mask* mask,
                               DepthLossMode mode) {
    require_depth_pair(depth_gs, depth_est, mask, "loss_depth");
    ImageLoss out;
    if (valid_count(depth_gs, mask) < 2) {
        out.value = 1.0;
        out.grad = Image(depth_gs.width, depth_gs.height, 1);
        return out;
    }
    ImageLoss r = pearson_with_grad(depth_gs, depth_est, mask);
    if (mode == DepthLossMode::one_minus_abs) {
        const double sign = r.value > 0.0 ? 1.0 : (r.value < 0.0 ? -1.0 : 0.0);
        out.value = 1.0 - std::abs(r.value);
        for (double& g : r.grad.data) g *= -sign;
    } else {
        out.value = 1.0 - r.value;
        for (double& g : r.grad.data) g = -g;
    }
    out.grad = std::move(r.grad);
    return out;
}

double loss_depth(const Image& depth_gs, const Image& depth_est, const Mask* mask, DepthLossMode mode) {
    return loss_depth_with_grad(depth_gs, depth_est, mask, mode).value;
}

namespace {

double mean_color_loss(std::span<const Image> renders, std::span<const Image> targets, double lambda) {
    if (renders.size() != targets.size()) {
        throw ContractError("loss: render and target counts differ");
    }
    if (renders.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < renders.size(); ++i) {
        sum += loss_color(renders[i], targets[i], lambda);
    }
    return sum / static_cast<double>(renders.size());
}

double mean_depth_loss(std::span<const DepthPair> pairs, DepthLossMode mode) {
    double sum = 0.0;
    for (const DepthPair& p : pairs) {
        sum += loss_depth(p.rendered, p.estimated, &p.mask, mode);
    }
    return sum / static_cast<double>(pairs.size());
}

} // namespace

double loss_sat(std::span<const Image> renders, std::span<const Image> targets,
                std::span<const double> alphas, std::span<const DepthPair> depth_pairs,
                const LossWeights& w, DepthLossMode mode) {
    w.validate();
    double total = mean_color_loss(renders, targets, w.lambda_dssim);
    total += w.lambda_op * opacity_entropy(alphas);
    if (!depth_pairs.empty()) {
        total += w.lambda_depth * mean_depth_loss(depth_pairs, mode);
    }
    return total;
}

double loss_idu(std::span<const Image> renders, std::span<const Image> refined_targets,
                std::span<const DepthPair> depth_pairs, const LossWeights& w, DepthLossMode mode) {
    w.validate();
    double total = mean_color_loss(renders, refined_targets, w.lambda_dssim);
    if (!depth_pairs.empty()) {
        total += w.lambda_depth * mean_depth_loss(depth_pairs, mode);
    }
    return total;
}

} // namespace skyfall
