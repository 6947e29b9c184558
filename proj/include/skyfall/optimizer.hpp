#pragma once

#include "skyfall/appearance.hpp"
#include "skyfall/geometry.hpp"
#include "skyfall/renderer.hpp"

#include <span>
#include <vector>

namespace skyfall {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// Per-parameter-class learning rates. Position rates are multiplied by the
/// scene extent and decay exponentially from init to final over the schedule.
struct LearningRates {
    double position_init = 0.00016;
    double position_final = 0.0000016;
    double rotation = 0.001;
    double scale = 0.001;
    double opacity = 0.05;
    double sh_dc = 0.0025;
    double sh_rest = 0.0025 / 20.0;
    double appearance_code = 0.005; // g_i
    double image_embedding = 0.001; // e_j
    double mlp = 0.0005;
};

/// One bias-corrected adaptive-moment update; `step` counts from 1.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, double lr, long step, const AdamParams& adam);

/// Gradients for every trainable quantity of a scene.
struct SceneGradients {
    std::vector<Gaussian> d_gaussians;
    Eigen::MatrixXd d_embeddings; // rows = images
    Eigen::VectorXd d_mlp;

    static SceneGradients zeros(std::size_t gaussians, int images);
    /// Adds `scale` times a render's gradients.
    void accumulate(const RenderGradients& g, double scale = 1.0);
    void add_opacity_logit_grad(std::span<const double> d_logits, double scale = 1.0);
};

/// Adam over the Gaussian cloud and the appearance model. Moment buffers for
/// Gaussians share the cloud's layout so densification can edit them in step.
class SceneOptimizer {
public:
    SceneOptimizer(const LearningRates& lr, const AdamParams& adam, double scene_extent,
                   int schedule_iters, std::size_t gaussians, int images);

    /// Applies one update. Throws TrainingError naming the parameter class
    /// when a gradient is not finite. `iter` drives the position schedule.
    void step(GaussianCloud& cloud, AppearanceModel* appearance, const SceneGradients& grads, int iter);

    double learning_rate(ParamClass c, int iter) const;
    const LearningRates& rates() const { return lr_; }
    long steps_taken() const { return steps_; }

    /// Freezes the per-image embeddings (used while a fixed embedding drives rendering).
    void set_embeddings_frozen(bool frozen) { embeddings_frozen_ = frozen; }
    bool embeddings_frozen() const { return embeddings_frozen_; }

    /// Zeroes the opacity moments (after an opacity reset).
    void reset_opacity_moments();

    std::vector<Gaussian> m;
    std::vector<Gaussian> v;

private:
    LearningRates lr_;
    AdamParams adam_;
    double extent_;
    int schedule_iters_;
    long steps_ = 0;
    bool embeddings_frozen_ = false;
    Eigen::MatrixXd emb_m_, emb_v_;
    Eigen::VectorXd mlp_m_, mlp_v_;
};

} // namespace skyfall
