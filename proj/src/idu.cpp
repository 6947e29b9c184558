#include "skyfall/idu.hpp"

#include "parallel.hpp"
#include "skyfall/errors.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <exception>

namespace skyfall {

void IduPlan::validate() const {
    if (episodes < 0) throw ContractError("episode count must be non-negative");
    if (views_per_point < 1 || samples_per_view < 1) throw ContractError("N_v and N_s must be at least 1");
    if (schedule.episodes() != episodes) {
        throw ContractError("curriculum length " + std::to_string(schedule.episodes()) +
                            " does not match episode count " + std::to_string(episodes));
    }
    if (episodes > 0) schedule.validate();
    if (episodes > 0 && grid.points.empty()) throw ContractError("look-at grid is empty");
    if (refiner.source_prompt.empty() || refiner.target_prompt.empty()) {
        throw ContractError("refiner prompts must be non-empty");
    }
    if (refiner.n_min < 0 || refiner.n_max < refiner.n_min) throw ContractError("need 0 <= n_min <= n_max");
    if (refine_concurrency < 1 || refine_retries < 0) throw ContractError("bad refine concurrency or retries");
    if (refined_fraction < 0.0 || refined_fraction > 1.0) throw ContractError("refined fraction outside [0,1]");
    if (intrinsics.resolution < 1 || !(intrinsics.fov_deg > 0.0 && intrinsics.fov_deg < 180.0)) {
        throw ContractError("bad render intrinsics");
    }
    episode_config.validate();
}

IduPlan IduPlan::preset(std::string_view name) {
    const ViewPreset vp = view_preset(name);
    IduPlan plan;
    plan.grid = vp.grid;
    plan.views_per_point = vp.views_per_point;
    plan.samples_per_view = vp.samples_per_view;
    plan.schedule = vp.schedule;
    plan.episodes = vp.schedule.episodes();
    return plan;
}

Dataset refine_views(const std::vector<Image>& renders, const std::vector<CameraPinhole>& cameras,
                     const IduPlan& plan, const Refiner& refiner, int episode) {
    if (renders.size() != cameras.size()) throw ContractError("one camera per render required");
    std::vector<std::vector<Image>> samples(renders.size());
    std::vector<std::string> errors(renders.size());
    detail::parallel_for(renders.size(), plan.refine_concurrency, [&](std::size_t v) {
        RefinerRequest req;
        req.image = renders[v];
        req.source_prompt = plan.refiner.source_prompt;
        req.target_prompt = plan.refiner.target_prompt;
        req.n_min = plan.refiner.n_min;
        req.n_max = plan.refiner.n_max;
        req.num_samples = plan.samples_per_view;
        req.seed = plan.seed * 1000003ull + static_cast<std::uint64_t>(episode) * 65537ull + v;
        for (int attempt = 0; attempt <= plan.refine_retries; ++attempt) {
            try {
                RefinerResponse resp = refiner.refine(req);
                check_response(req, resp);
                samples[v] = std::move(resp.images);
                errors[v].clear();
                return;
            } catch (const std::exception& e) {
                errors[v] = e.what();
                spdlog::warn("refine view {} attempt {} failed: {}", v, attempt + 1, e.what());
            }
        }
    });

    std::size_t done = 0;
    std::string first_error;
    for (std::size_t v = 0; v < renders.size(); ++v) {
        if (errors[v].empty()) {
            ++done;
        } else if (first_error.empty()) {
            first_error = "view " + std::to_string(v) + ": " + errors[v];
        }
    }
    if (done != renders.size()) {
        throw OracleError("refinement failed after retries (" + std::to_string(done) + "/" +
                          std::to_string(renders.size()) + " views refined); " + first_error);
    }

    Dataset out;
    out.reserve(renders.size() * plan.samples_per_view);
    for (std::size_t v = 0; v < renders.size(); ++v) {
        for (int s = 0; s < plan.samples_per_view; ++s) {
            TrainingImage t;
            t.camera = cameras[v];
            t.image = std::move(samples[v][s]);
            t.embedding_index = -1;
            t.provenance = Provenance::refined;
            t.source_view = static_cast<int>(v);
            t.sample_index = s;
            out.push_back(std::move(t));
        }
    }
    return out;
}

IduResult idu_run(SceneModel model, const IduPlan& plan, const Dataset& satellite, const Refiner& refiner,
                  const DepthOracle* oracle, std::ostream* csv) {
    plan.validate();
    IduResult result;
    std::mt19937_64 rng(plan.seed);
    const int images = model.appearance.num_images();
    if (plan.episode_config.use_appearance && images > 0) {
        result.fixed_embedding_index = std::uniform_int_distribution<int>(0, images - 1)(rng);
        result.fixed_embedding = model.appearance.embedding(result.fixed_embedding_index);
    }
    result.model = std::move(model);

    for (int e = 0; e < plan.episodes; ++e) {
        EpisodeRecord rec;
        rec.episode = e;
        rec.elevation_deg = plan.schedule.elevations_deg[e];
        rec.radius = plan.schedule.radii[e];
        try {
            rec.cameras = orbit_views(plan.grid, rec.radius, rec.elevation_deg, plan.views_per_point, plan.intrinsics);
            std::optional<AppearanceContext> ctx;
            if (result.fixed_embedding.size() > 0) {
                ctx = AppearanceContext::fixed(result.model.appearance, result.fixed_embedding);
            }
            std::vector<Image> renders;
            renders.reserve(rec.cameras.size());
            for (const CameraPinhole& cam : rec.cameras) {
                Image rgb = render(result.model.cloud, cam, ctx, plan.episode_config.render).rgb;
                for (double& x : rgb.data) x = std::clamp(x, 0.0, 1.0);
                renders.push_back(std::move(rgb));
            }
            const Dataset refined = refine_views(renders, rec.cameras, plan, refiner, e);
            rec.refined_images = refined.size();

            TrainConfig cfg = plan.episode_config;
            cfg.seed = plan.episode_config.seed + static_cast<std::uint64_t>(e) + 1;
            SceneModel next = train_episode(result.model, refined, satellite, cfg, result.fixed_embedding, oracle,
                                            plan.refined_fraction, csv);
            result.model = std::move(next);
            rec.gaussians = result.model.cloud.size();
            spdlog::info("episode {}: elevation {} radius {}, {} refined images, {} gaussians", e,
                         rec.elevation_deg, rec.radius, rec.refined_images, rec.gaussians);
            result.episodes.push_back(std::move(rec));
        } catch (const std::exception& ex) {
            result.completed = false;
            result.backend_failure = dynamic_cast<const OracleError*>(&ex) != nullptr;
            result.diagnostics = "episode " + std::to_string(e) + " failed: " + ex.what();
            spdlog::error("{}", result.diagnostics);
            break;
        }
    }
    return result;
}

} // namespace skyfall
