#pragma once

#include "skyfall/geometry.hpp"
#include "skyfall/image.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace skyfall {

struct LossWeights {
    double lambda_dssim = 0.2;
    double lambda_op = 10.0;
    double lambda_depth = 0.5;

    void validate() const;
};

enum class DepthLossMode {
    one_minus_pcorr, // 1 - r: rewards positive correlation
    one_minus_abs,   // 1 - |r|
};

DepthLossMode parse_depth_loss_mode(std::string_view name);
std::string_view depth_loss_mode_name(DepthLossMode mode);

/// Non-zero entries mark valid pixels. An empty mask means every pixel is valid.
using Mask = std::vector<std::uint8_t>;

/// A scalar loss together with its gradient with respect to the first image argument.
struct ImageLoss {
    double value = 0.0;
    Image grad;
};

inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean local SSIM over pixels and channels. Gaussian window, zero padding ("same" size).
double ssim(const Image& pred, const Image& target);
ImageLoss ssim_with_grad(const Image& pred, const Image& target);

double psnr(const Image& pred, const Image& target);

/// lambda * DSSIM + (1 - lambda) * mean |pred - target|, DSSIM = (1 - SSIM) / 2.
double loss_color(const Image& pred, const Image& target, double lambda_dssim);
ImageLoss loss_color_with_grad(const Image& pred, const Image& target, double lambda_dssim);

inline constexpr double kEntropyEps = 1e-6;

/// Mean binary entropy of the opacities; 0 for an empty input.
double opacity_entropy(std::span<const double> alphas);
/// Gradient of opacity_entropy with respect to each opacity logit.
std::vector<double> opacity_entropy_grad_logits(const GaussianCloud& cloud, double* value = nullptr);

inline constexpr double kPearsonEps = 1e-8;

/// Pearson correlation over valid pixels. Requires at least two valid pixels;
/// returns 0 when either input is constant.
double pearson(const Image& a, const Image& b, const Mask* mask = nullptr);
ImageLoss pearson_with_grad(const Image& a, const Image& b, const Mask* mask = nullptr);

/// Pixels whose accumulated alpha reaches this value take part in the depth loss.
inline constexpr double kDepthMaskAlpha = 0.5;
Mask depth_mask_from_alpha(const Image& alpha);

/// Scale-invariant depth loss; 1 (neutral, zero gradient) when the correlation is degenerate.
double loss_depth(const Image& depth_gs, const Image& depth_est, const Mask* mask,
                  DepthLossMode mode = DepthLossMode::one_minus_pcorr);
ImageLoss loss_depth_with_grad(const Image& depth_gs, const Image& depth_est, const Mask* mask,
                               DepthLossMode mode = DepthLossMode::one_minus_pcorr);

struct DepthPair {
    Image rendered;
    Image estimated;
    Mask mask;
};

/// Reconstruction objective: mean colour loss + lambda_op * entropy + lambda_depth * mean depth loss.
/// The depth term is only included when `depth_pairs` is non-empty.
double loss_sat(std::span<const Image> renders, std::span<const Image> targets,
                std::span<const double> alphas, std::span<const DepthPair> depth_pairs,
                const LossWeights& w, DepthLossMode mode = DepthLossMode::one_minus_pcorr);

/// Dataset-update objective: as loss_sat without the opacity term.
double loss_idu(std::span<const Image> renders, std::span<const Image> refined_targets,
                std::span<const DepthPair> depth_pairs, const LossWeights& w,
                DepthLossMode mode = DepthLossMode::one_minus_pcorr);

} // namespace skyfall
