#include "skyfall/optimizer.hpp"

#include "skyfall/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace skyfall {

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, double lr, long step, const AdamParams& adam) {
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * grad[i];
        v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + adam.eps);
    }
}

SceneGradients SceneGradients::zeros(std::size_t gaussians, int images) {
    SceneGradients g;
    g.d_gaussians.assign(gaussians, Gaussian::zero());
    g.d_embeddings = Eigen::MatrixXd::Zero(images, kImageEmbeddingDim);
    g.d_mlp = Eigen::VectorXd::Zero(images > 0 ? AppearanceModel::kMlpParamCount : 0);
    return g;
}

void SceneGradients::accumulate(const RenderGradients& g, double scale) {
    if (g.d_gaussians.size() != d_gaussians.size()) {
        throw ContractError("gradient accumulation: Gaussian count mismatch");
    }
    for (std::size_t i = 0; i < d_gaussians.size(); ++i) {
        if (!g.visible[i]) {
            continue;
        }
        for (ParamClass c : kAllParamClasses) {
            auto dst = param_span(d_gaussians[i], c);
            auto src = param_span(g.d_gaussians[i], c);
            for (std::size_t k = 0; k < dst.size(); ++k) {
                dst[k] += scale * src[k];
            }
        }
    }
    if (g.has_appearance && g.d_mlp_params.size() > 0) {
        if (d_mlp.size() == g.d_mlp_params.size()) {
            d_mlp += scale * g.d_mlp_params;
        }
        if (g.embedding_index >= 0 && g.embedding_index < d_embeddings.rows()) {
            d_embeddings.row(g.embedding_index) += scale * g.d_embedding.transpose();
        }
    }
}

void SceneGradients::add_opacity_logit_grad(std::span<const double> d_logits, double scale) {
    if (d_logits.size() != d_gaussians.size()) {
        throw ContractError("opacity gradient size mismatch");
    }
    for (std::size_t i = 0; i < d_logits.size(); ++i) {
        d_gaussians[i].opacity_logit += scale * d_logits[i];
    }
}

SceneOptimizer::SceneOptimizer(const LearningRates& lr, const AdamParams& adam, double scene_extent,
                               int schedule_iters, std::size_t gaussians, int images)
    : m(gaussians, Gaussian::zero()),
      v(gaussians, Gaussian::zero()),
      lr_(lr),
      adam_(adam),
      extent_(scene_extent),
      schedule_iters_(std::max(1, schedule_iters)),
      emb_m_(Eigen::MatrixXd::Zero(images, kImageEmbeddingDim)),
      emb_v_(Eigen::MatrixXd::Zero(images, kImageEmbeddingDim)),
      mlp_m_(Eigen::VectorXd::Zero(AppearanceModel::kMlpParamCount)),
      mlp_v_(Eigen::VectorXd::Zero(AppearanceModel::kMlpParamCount)) {}

double SceneOptimizer::learning_rate(ParamClass c, int iter) const {
    switch (c) {
    case ParamClass::position: {
        const double t = std::clamp(static_cast<double>(iter) / schedule_iters_, 0.0, 1.0);
        const double log_lr = (1.0 - t) * std::log(lr_.position_init) + t * std::log(lr_.position_final);
        return std::exp(log_lr) * extent_;
    }
    case ParamClass::rotation: return lr_.rotation;
    case ParamClass::scale: return lr_.scale;
    case ParamClass::opacity: return lr_.opacity;
    case ParamClass::sh_dc: return lr_.sh_dc;
    case ParamClass::sh_rest: return lr_.sh_rest;
    case ParamClass::appearance_code: return lr_.appearance_code;
    }
    return 0.0;
}

void SceneOptimizer::step(GaussianCloud& cloud, AppearanceModel* appearance, const SceneGradients& grads,
                          int iter) {
    if (grads.d_gaussians.size() != cloud.size() || m.size() != cloud.size()) {
        throw ContractError("optimizer state does not match the cloud size");
    }
    for (const Gaussian& g : grads.d_gaussians) {
        for (ParamClass c : kAllParamClasses) {
            for (double x : param_span(g, c)) {
                if (!std::isfinite(x)) {
                    throw TrainingError("non-finite gradient in parameter class '" +
                                        std::string(param_class_name(c)) + "' at iteration " +
                                        std::to_string(iter));
                }
            }
        }
    }
    if (!grads.d_embeddings.allFinite()) {
        throw TrainingError("non-finite gradient in parameter class 'image_embedding'");
    }
    if (!grads.d_mlp.allFinite()) {
        throw TrainingError("non-finite gradient in parameter class 'appearance_mlp'");
    }

    ++steps_;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (ParamClass c : kAllParamClasses) {
            adam_update(param_span(cloud.gaussians[i], c), param_span(grads.d_gaussians[i], c),
                        param_span(m[i], c), param_span(v[i], c), learning_rate(c, iter), steps_, adam_);
        }
        Vec4& q = cloud.gaussians[i].rotation;
        const double n = q.norm();
        q = n > 0.0 ? Vec4(q / n) : Vec4(1, 0, 0, 0);
    }
    if (appearance != nullptr && appearance->mlp_params.size() > 0) {
        if (!embeddings_frozen_ && grads.d_embeddings.rows() == appearance->embeddings.rows()) {
            adam_update({appearance->embeddings.data(), static_cast<std::size_t>(appearance->embeddings.size())},
                        {grads.d_embeddings.data(), static_cast<std::size_t>(grads.d_embeddings.size())},
                        {emb_m_.data(), static_cast<std::size_t>(emb_m_.size())},
                        {emb_v_.data(), static_cast<std::size_t>(emb_v_.size())}, lr_.image_embedding, steps_,
                        adam_);
        }
        if (grads.d_mlp.size() == appearance->mlp_params.size()) {
            adam_update({appearance->mlp_params.data(), static_cast<std::size_t>(appearance->mlp_params.size())},
                        {grads.d_mlp.data(), static_cast<std::size_t>(grads.d_mlp.size())},
                        {mlp_m_.data(), static_cast<std::size_t>(mlp_m_.size())},
                        {mlp_v_.data(), static_cast<std::size_t>(mlp_v_.size())}, lr_.mlp, steps_, adam_);
        }
    }
}

void SceneOptimizer::reset_opacity_moments() {
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i].opacity_logit = 0.0;
        v[i].opacity_logit = 0.0;
    }
}

} // namespace skyfall
