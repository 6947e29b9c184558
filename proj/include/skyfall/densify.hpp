#pragma once

#include "skyfall/geometry.hpp"
#include "skyfall/renderer.hpp"

#include <random>
#include <vector>

namespace skyfall {

struct DensifyConfig {
    double grad_threshold = 0.001;
    double percent_dense = 0.01;   // clone/split boundary as a fraction of the scene extent
    double min_opacity = 0.005;
    double max_covariance = 20.0;  // world units^2, largest covariance eigenvalue
    double max_screen_fraction = 1.0; // 3-sigma footprint radius / larger image side
    int split_count = 2;
    double split_scale_divisor = 1.6;
};

/// Running view-space gradient statistics between densification passes.
struct DensifyStats {
    std::vector<double> grad_accum;
    std::vector<int> visible_count;
    std::vector<double> max_screen_fraction;

    void reset(std::size_t n);
    void accumulate(const RenderGradients& g, const std::vector<double>& screen_fraction = {});
};

struct DensifyReport {
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
};

/// Clone/split Gaussians whose mean accumulated 2D gradient exceeds the
/// threshold (only when `allow_growth`), then prune low-opacity, oversized
/// and screen-filling ones. Every vector in `companions` (optimizer moments)
/// is edited in lockstep; new entries start at zero. Stats are reset.
DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, const DensifyConfig& config,
                                double scene_extent, bool allow_growth, std::mt19937_64& rng,
                                std::vector<std::vector<Gaussian>*> companions = {});

/// Largest eigenvalue of the Gaussian's covariance.
double max_covariance_eigenvalue(const Gaussian& g);

} // namespace skyfall
