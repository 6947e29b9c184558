#include "skyfall/train.hpp"

#include "parallel.hpp"
#include "skyfall/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <string>

namespace skyfall {

std::string_view provenance_name(Provenance p) {
    switch (p) {
    case Provenance::satellite: return "satellite";
    case Provenance::refined: return "refined";
    case Provenance::pseudo: return "pseudo";
    }
    return "satellite";
}

Provenance parse_provenance(std::string_view name) {
    if (name == "satellite") return Provenance::satellite;
    if (name == "refined") return Provenance::refined;
    if (name == "pseudo") return Provenance::pseudo;
    throw ContractError("unknown provenance '" + std::string(name) + "'");
}

TrainConfig TrainConfig::reconstruction() { return TrainConfig{}; }

TrainConfig TrainConfig::episode() {
    TrainConfig c;
    c.total_iters = 10000;
    c.densify_start = 500;
    c.densify_end = 9000;
    c.opacity_regularization = false;
    return c;
}

void TrainConfig::validate() const {
    if (total_iters < 0) {
        throw ContractError("total_iters must be non-negative");
    }
    if (total_iters > 0 && (!(densify_start < densify_end) || densify_end > total_iters)) {
        throw ContractError("densification window must satisfy densify_start < densify_end <= total_iters");
    }
    if (densify_interval <= 0 || opacity_reset_interval <= 0 || pseudo.every <= 0 || pseudo.count < 0 ||
        pseudo.resolution <= 0 || oracle_concurrency <= 0 || finite_check_interval <= 0) {
        throw ContractError("intervals, counts and resolutions must be positive");
    }
    if (!(densify.grad_threshold > 0.0) || !(densify.max_covariance > 0.0) || !(densify.min_opacity > 0.0)) {
        throw ContractError("densification thresholds must be positive");
    }
    weights.validate();
}

MixedSampler::MixedSampler(std::size_t refined, std::size_t satellite, double refined_fraction,
                           std::uint64_t seed)
    : refined_n_(refined), satellite_n_(satellite), fraction_(refined_fraction), rng_(seed) {
    if (refined == 0 && satellite == 0) {
        throw ContractError("MixedSampler: both pools are empty");
    }
    if (refined_fraction < 0.0 || refined_fraction > 1.0) {
        throw ContractError("MixedSampler: refined fraction must lie in [0,1]");
    }
}

std::size_t MixedSampler::take(std::vector<std::size_t>& perm, std::size_t& cursor, std::size_t n) {
    if (cursor >= perm.size()) {
        perm.resize(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng_);
        cursor = 0;
    }
    return perm[cursor++];
}

MixedSampler::Draw MixedSampler::next() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    bool refined = u(rng_) < fraction_;
    if (refined_n_ == 0) refined = false;
    if (satellite_n_ == 0) refined = true;
    if (refined) {
        return {Provenance::refined, take(refined_perm_, refined_cursor_, refined_n_)};
    }
    return {Provenance::satellite, take(satellite_perm_, satellite_cursor_, satellite_n_)};
}

double scene_extent(const Dataset& views) {
    std::vector<Vec3> pts;
    for (const TrainingImage& v : views) {
        const Vec3 c = v.camera.center();
        pts.push_back(c);
        const Vec3 dir = v.camera.rotation.row(2).transpose();
        if (dir.z() < 0.0) {
            pts.push_back(c + dir * (-c.z() / dir.z()));
        }
    }
    if (pts.empty()) {
        return 1.0;
    }
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    double r = 0.0;
    for (const Vec3& p : pts) r = std::max(r, (p - centroid).norm());
    return r > 0.0 ? r : 1.0;
}

Trainer::Trainer(SceneModel& model, const TrainConfig& config, const DepthOracle* oracle, double extent)
    : model_(model),
      config_(config),
      oracle_(oracle),
      extent_(extent),
      rng_(config.seed),
      optimizer_(config.lr, config.adam, extent, config.total_iters, model.cloud.size(),
                 model.appearance.num_images()) {
    config_.validate();
    densify_stats_.reset(model.cloud.size());
}

void Trainer::reconstruct(const Dataset& satellite) {
    if (config_.total_iters == 0) {
        return;
    }
    if (satellite.empty()) {
        throw ContractError("reconstruction needs at least one training image");
    }
    const bool appearance = config_.use_appearance && model_.appearance.num_images() > 0;
    std::vector<std::size_t> perm(satellite.size());
    std::size_t cursor = perm.size();
    for (int iter = 1; iter <= config_.total_iters; ++iter) {
        if (cursor >= perm.size()) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            std::shuffle(perm.begin(), perm.end(), rng_);
            cursor = 0;
        }
        const TrainingImage& view = satellite[perm[cursor++]];
        std::vector<AppearanceContext> ctx;
        if (appearance) {
            const int e = view.embedding_index >= 0 ? view.embedding_index : 0;
            ctx.push_back(AppearanceContext::for_image(model_.appearance, e));
        }
        step(iter, Target{&view, ctx.empty() ? nullptr : &ctx.front()}, ctx);
    }
}

void Trainer::episode(const Dataset& refined, const Dataset& satellite, const Eigen::VectorXd& fixed_embedding,
                      double refined_fraction) {
    if (config_.total_iters == 0) {
        return;
    }
    if (refined.empty()) {
        throw ContractError("episode training needs a non-empty refined dataset");
    }
    const bool appearance = config_.use_appearance && model_.appearance.num_images() > 0;
    optimizer_.set_embeddings_frozen(true);
    MixedSampler sampler(refined.size(), satellite.size(), refined_fraction, rng_());
    for (int iter = 1; iter <= config_.total_iters; ++iter) {
        const auto draw = sampler.next();
        const TrainingImage& view = draw.pool == Provenance::refined ? refined[draw.index] : satellite[draw.index];
        std::vector<AppearanceContext> ctx;
        if (appearance) {
            if (draw.pool == Provenance::refined || view.embedding_index < 0) {
                ctx.push_back(AppearanceContext::fixed(model_.appearance, fixed_embedding));
            } else {
                ctx.push_back(AppearanceContext::for_image(model_.appearance, view.embedding_index));
            }
        }
        step(iter, Target{&view, ctx.empty() ? nullptr : &ctx.front()}, ctx);
    }
}

void Trainer::step(int iter, const Target& target, const std::vector<AppearanceContext>&) {
    GaussianCloud& cloud = model_.cloud;
    const bool appearance = target.appearance != nullptr;
    SceneGradients grads = SceneGradients::zeros(cloud.size(), appearance ? model_.appearance.num_images() : 0);

    StepStats stats;
    stats.iter = iter;
    stats.source = target.view->provenance;
    {
        Rasterizer raster(cloud, target.view->camera, target.appearance, config_.render);
        const ImageLoss color = loss_color_with_grad(raster.output().rgb, target.view->image,
                                                     config_.weights.lambda_dssim);
        stats.loss_color = color.value;
        RenderUpstream up = RenderUpstream::zeros(target.view->camera.width, target.view->camera.height);
        up.d_rgb = color.grad;
        const RenderGradients rg = raster.backward(up);
        grads.accumulate(rg);
        densify_stats_.accumulate(rg, raster.footprint_fraction());
    }

    if (config_.opacity_regularization) {
        double entropy = 0.0;
        const auto d_logits = opacity_entropy_grad_logits(cloud, &entropy);
        stats.has_opacity_term = true;
        stats.loss_op = entropy;
        grads.add_opacity_logit_grad(d_logits, config_.weights.lambda_op);
    }

    if (config_.depth_supervision && oracle_ != nullptr && config_.pseudo.count > 0 &&
        iter % config_.pseudo.every == 0) {
        add_depth_term(iter, grads, stats);
    }

    optimizer_.step(cloud, appearance ? &model_.appearance : nullptr, grads, iter);

    if (iter > config_.densify_start && iter <= config_.densify_end && iter % config_.densify_interval == 0) {
        densify_and_prune(cloud, densify_stats_, config_.densify, extent_, true, rng_,
                          {&optimizer_.m, &optimizer_.v});
    }
    const bool reset_allowed = !config_.opacity_regularization || config_.reset_opacity_with_entropy;
    if (reset_allowed && iter <= config_.densify_end && iter % config_.opacity_reset_interval == 0) {
        const double cap = logit(0.01);
        for (Gaussian& g : cloud.gaussians) {
            g.opacity_logit = std::min(g.opacity_logit, cap);
        }
        optimizer_.reset_opacity_moments();
    }
    if (iter % config_.finite_check_interval == 0) {
        check_finite(iter);
    }

    stats.num_gaussians = cloud.size();
    last_ = stats;
    if (csv_ != nullptr) {
        *csv_ << stats.iter << ',' << stats.loss_color << ',' << stats.loss_op << ',' << stats.loss_depth << ','
              << stats.num_gaussians << '\n';
    }
    if (callback_) {
        callback_(stats);
    }
}

void Trainer::add_depth_term(int iter, SceneGradients& grads, StepStats& stats) {
    const auto cams = sample_pseudo_cameras(rng_, iter, config_.total_iters, config_.pseudo);
    const bool appearance =
        config_.use_appearance && model_.appearance.num_images() > 0 && oracle_->uses_image();
    std::uniform_int_distribution<int> pick(0, std::max(0, model_.appearance.num_images() - 1));

    SceneGradients local = SceneGradients::zeros(grads.d_gaussians.size(), static_cast<int>(grads.d_embeddings.rows()));
    const double weight = config_.weights.lambda_depth / static_cast<double>(cams.size());
    double loss_sum = 0.0;
    const std::size_t batch = static_cast<std::size_t>(config_.oracle_concurrency);
    for (std::size_t start = 0; start < cams.size(); start += batch) {
        const std::size_t end = std::min(cams.size(), start + batch);
        std::vector<AppearanceContext> contexts;
        contexts.reserve(end - start);
        std::vector<Rasterizer> rasters;
        rasters.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) {
            if (appearance) {
                contexts.push_back(AppearanceContext::for_image(model_.appearance, pick(rng_)));
            }
            rasters.emplace_back(model_.cloud, cams[k].camera, appearance ? &contexts.back() : nullptr,
                                 config_.render);
        }
        std::vector<Image> estimates(rasters.size());
        std::vector<std::string> errors(rasters.size());
        detail::parallel_for(rasters.size(), config_.oracle_concurrency, [&](std::size_t k) {
            try {
                estimates[k] = estimate_depth(*oracle_, rasters[k].output().rgb, cams[start + k].camera);
            } catch (const std::exception& e) {
                errors[k] = e.what();
            }
        });
        for (const std::string& err : errors) {
            if (!err.empty()) {
                spdlog::warn("iteration {}: depth oracle failed ({}); skipping depth term", iter, err);
                ++depth_skipped_;
                return;
            }
        }
        for (std::size_t k = 0; k < rasters.size(); ++k) {
            const RenderOutput& out = rasters[k].output();
            const Mask mask = depth_mask_from_alpha(out.alpha);
            const ImageLoss ld = loss_depth_with_grad(out.depth, estimates[k], &mask, config_.depth_mode);
            loss_sum += ld.value;
            RenderUpstream up = RenderUpstream::zeros(out.depth.width, out.depth.height);
            up.d_depth = ld.grad;
            local.accumulate(rasters[k].backward(up), weight);
        }
    }
    stats.has_depth_term = true;
    stats.loss_depth = loss_sum / static_cast<double>(cams.size());
    for (std::size_t i = 0; i < grads.d_gaussians.size(); ++i) {
        for (ParamClass c : kAllParamClasses) {
            auto dst = param_span(grads.d_gaussians[i], c);
            auto src = param_span(local.d_gaussians[i], c);
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
}

void Trainer::check_finite(int iter) const {
    for (const Gaussian& g : model_.cloud.gaussians) {
        for (ParamClass c : kAllParamClasses) {
            for (double x : param_span(g, c)) {
                if (!std::isfinite(x)) {
                    throw TrainingError("non-finite parameter in class '" + std::string(param_class_name(c)) +
                                        "' at iteration " + std::to_string(iter));
                }
            }
        }
    }
    if (!model_.appearance.embeddings.allFinite() || !model_.appearance.mlp_params.allFinite()) {
        throw TrainingError("non-finite appearance parameter at iteration " + std::to_string(iter));
    }
}

SceneModel reconstruct_stage(SceneModel init, const Dataset& satellite, const TrainConfig& config,
                             const DepthOracle* oracle, std::ostream* csv) {
    config.validate();
    if (config.total_iters == 0) {
        return init;
    }
    if (config.use_appearance && init.appearance.num_images() == 0) {
        init.appearance = AppearanceModel(static_cast<int>(satellite.size()), config.seed ^ 0xa99eaull);
    }
    Trainer trainer(init, config, oracle, scene_extent(satellite));
    trainer.set_log(csv);
    trainer.reconstruct(satellite);
    return init;
}

SceneModel train_episode(SceneModel model, const Dataset& refined, const Dataset& satellite,
                         const TrainConfig& config, const Eigen::VectorXd& fixed_embedding,
                         const DepthOracle* oracle, double refined_fraction, std::ostream* csv) {
    config.validate();
    if (config.total_iters == 0) {
        return model;
    }
    Dataset all = refined;
    all.insert(all.end(), satellite.begin(), satellite.end());
    Trainer trainer(model, config, oracle, scene_extent(all));
    trainer.set_log(csv);
    trainer.episode(refined, satellite, fixed_embedding, refined_fraction);
    return model;
}

} // namespace skyfall
