#include "skyfall/densify.hpp"

#include "skyfall/errors.hpp"

#include <algorithm>
#include <cmath>

namespace skyfall {

void DensifyStats::reset(std::size_t n) {
    grad_accum.assign(n, 0.0);
    visible_count.assign(n, 0);
    max_screen_fraction.assign(n, 0.0);
}

void DensifyStats::accumulate(const RenderGradients& g, const std::vector<double>& screen_fraction) {
    if (grad_accum.size() != g.visible.size()) {
        throw ContractError("densify statistics do not match the cloud size");
    }
    for (std::size_t i = 0; i < grad_accum.size(); ++i) {
        if (!g.visible[i]) {
            continue;
        }
        grad_accum[i] += g.mean2d_grad_norm[i];
        visible_count[i] += 1;
        if (!screen_fraction.empty()) {
            max_screen_fraction[i] = std::max(max_screen_fraction[i], screen_fraction[i]);
        }
    }
}

double max_covariance_eigenvalue(const Gaussian& g) { return std::exp(2.0 * g.log_scale.maxCoeff()); }

DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, const DensifyConfig& config,
                                double scene_extent, bool allow_growth, std::mt19937_64& rng,
                                std::vector<std::vector<Gaussian>*> companions) {
    const std::size_t n = cloud.size();
    if (stats.grad_accum.size() != n) {
        throw ContractError("densify statistics do not match the cloud size");
    }
    for (auto* c : companions) {
        if (c->size() != n) {
            throw ContractError("optimizer state does not match the cloud size");
        }
    }

    DensifyReport report;
    std::vector<Gaussian> next;
    std::vector<std::vector<Gaussian>> next_comp(companions.size());
    next.reserve(n * 2);
    std::vector<long> origin; // source index, -1 for Gaussians created in this pass
    origin.reserve(n * 2);

    auto keep = [&](std::size_t i) {
        next.push_back(cloud.gaussians[i]);
        origin.push_back(static_cast<long>(i));
        for (std::size_t c = 0; c < companions.size(); ++c) next_comp[c].push_back((*companions[c])[i]);
    };
    auto add_new = [&](const Gaussian& g) {
        next.push_back(g);
        origin.push_back(-1);
        for (auto& c : next_comp) c.push_back(Gaussian::zero());
    };

    std::normal_distribution<double> normal(0.0, 1.0);
    const double size_limit = config.percent_dense * scene_extent;
    for (std::size_t i = 0; i < n; ++i) {
        const Gaussian& g = cloud.gaussians[i];
        const double mean_grad =
            stats.visible_count[i] > 0 ? stats.grad_accum[i] / stats.visible_count[i] : 0.0;
        if (!allow_growth || !(mean_grad > config.grad_threshold)) {
            keep(i);
            continue;
        }
        const double max_scale = std::exp(g.log_scale.maxCoeff());
        if (max_scale <= size_limit) {
            keep(i);
            add_new(g);
            ++report.cloned;
            continue;
        }
        const Mat3 rot = rotation_from_quaternion(g.rotation.normalized());
        const Vec3 scale = g.log_scale.array().exp();
        for (int k = 0; k < config.split_count; ++k) {
            Gaussian child = g;
            const Vec3 offset(normal(rng) * scale.x(), normal(rng) * scale.y(), normal(rng) * scale.z());
            child.position = g.position + rot * offset;
            child.log_scale = (scale / config.split_scale_divisor).array().log();
            add_new(child);
        }
        ++report.split;
    }

    std::vector<Gaussian> pruned;
    std::vector<std::vector<Gaussian>> pruned_comp(companions.size());
    pruned.reserve(next.size());
    for (std::size_t k = 0; k < next.size(); ++k) {
        const Gaussian& g = next[k];
        bool drop = g.opacity() < config.min_opacity || max_covariance_eigenvalue(g) > config.max_covariance;
        if (origin[k] >= 0) {
            drop = drop || stats.max_screen_fraction[origin[k]] > config.max_screen_fraction;
        }
        if (drop) {
            ++report.pruned;
            continue;
        }
        pruned.push_back(g);
        for (std::size_t c = 0; c < companions.size(); ++c) pruned_comp[c].push_back(next_comp[c][k]);
    }

    cloud.gaussians = std::move(pruned);
    for (std::size_t c = 0; c < companions.size(); ++c) *companions[c] = std::move(pruned_comp[c]);
    stats.reset(cloud.size());
    return report;
}

} // namespace skyfall
