#include "skyfall/config.hpp"

#include "skyfall/errors.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace skyfall {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ContractError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.contains(it.key())) throw ContractError(where + ": unknown key '" + it.key() + "'");
    }
}

template <class T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json vec_to_json(const std::vector<double>& v) { return json(v); }

} // namespace

json camera_to_json(const CameraPinhole& cam) {
    json r = json::array();
    for (int i = 0; i < 3; ++i) r.push_back({cam.rotation(i, 0), cam.rotation(i, 1), cam.rotation(i, 2)});
    return json{{"rotation", r},
                {"translation", {cam.translation.x(), cam.translation.y(), cam.translation.z()}},
                {"fx", cam.fx},
                {"fy", cam.fy},
                {"cx", cam.cx},
                {"cy", cam.cy},
                {"width", cam.width},
                {"height", cam.height},
                {"near", cam.near},
                {"far", cam.far}};
}

CameraPinhole camera_from_json(const json& j) {
    CameraPinhole cam;
    try {
        const json& r = j.at("rotation");
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) cam.rotation(i, k) = r.at(i).at(k).get<double>();
        for (int i = 0; i < 3; ++i) cam.translation[i] = j.at("translation").at(i).get<double>();
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        take(j, "near", cam.near);
        take(j, "far", cam.far);
    } catch (const json::exception& e) {
        throw ContractError(std::string("camera: ") + e.what());
    }
    cam.validate();
    return cam;
}

json train_config_to_json(const TrainConfig& c) {
    return json{
        {"total_iters", c.total_iters},
        {"densify_start", c.densify_start},
        {"densify_end", c.densify_end},
        {"densify_interval", c.densify_interval},
        {"opacity_reset_interval", c.opacity_reset_interval},
        {"reset_opacity_with_entropy", c.reset_opacity_with_entropy},
        {"densify_grad_threshold", c.densify.grad_threshold},
        {"percent_dense", c.densify.percent_dense},
        {"min_opacity", c.densify.min_opacity},
        {"max_covariance_prune", c.densify.max_covariance},
        {"max_screen_fraction", c.densify.max_screen_fraction},
        {"lr",
         {{"position_init", c.lr.position_init},
          {"position_final", c.lr.position_final},
          {"rotation", c.lr.rotation},
          {"scale", c.lr.scale},
          {"opacity", c.lr.opacity},
          {"sh_dc", c.lr.sh_dc},
          {"sh_rest", c.lr.sh_rest},
          {"appearance_code", c.lr.appearance_code},
          {"image_embedding", c.lr.image_embedding},
          {"mlp", c.lr.mlp}}},
        {"lambda_dssim", c.weights.lambda_dssim},
        {"lambda_op", c.weights.lambda_op},
        {"lambda_depth", c.weights.lambda_depth},
        {"depth_loss_mode", std::string(depth_loss_mode_name(c.depth_mode))},
        {"opacity_regularization", c.opacity_regularization},
        {"depth_supervision", c.depth_supervision},
        {"use_appearance", c.use_appearance},
        {"pseudo",
         {{"every", c.pseudo.every},
          {"count", c.pseudo.count},
          {"resolution", c.pseudo.resolution},
          {"fov_deg", c.pseudo.fov_deg},
          {"lookat_sigma", c.pseudo.lookat_sigma},
          {"elevation_start", c.pseudo.elevation_start},
          {"elevation_end", c.pseudo.elevation_end},
          {"radius_start", c.pseudo.radius_start},
          {"radius_end", c.pseudo.radius_end}}},
        {"oracle_concurrency", c.oracle_concurrency},
        {"render_mode", c.render.mode == RenderMode::deterministic ? "deterministic" : "parallel"},
        {"render_threads", c.render.threads},
        {"finite_check_interval", c.finite_check_interval},
        {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    reject_unknown(j,
                   {"total_iters", "densify_start", "densify_end", "densify_interval", "opacity_reset_interval", "reset_opacity_with_entropy",
                    "densify_grad_threshold", "percent_dense", "min_opacity", "max_covariance_prune",
                    "max_screen_fraction", "lr", "lambda_dssim", "lambda_op", "lambda_depth", "depth_loss_mode",
                    "opacity_regularization", "depth_supervision", "use_appearance", "pseudo",
                    "oracle_concurrency", "render_mode", "render_threads", "finite_check_interval", "seed"},
                   "train config");
    try {
        take(j, "total_iters", c.total_iters);
        take(j, "densify_start", c.densify_start);
        take(j, "densify_end", c.densify_end);
        take(j, "densify_interval", c.densify_interval);
        take(j, "opacity_reset_interval", c.opacity_reset_interval);
        take(j, "reset_opacity_with_entropy", c.reset_opacity_with_entropy);
        take(j, "densify_grad_threshold", c.densify.grad_threshold);
        take(j, "percent_dense", c.densify.percent_dense);
        take(j, "min_opacity", c.densify.min_opacity);
        take(j, "max_covariance_prune", c.densify.max_covariance);
        take(j, "max_screen_fraction", c.densify.max_screen_fraction);
        if (j.contains("lr")) {
            const json& l = j.at("lr");
            reject_unknown(l,
                           {"position_init", "position_final", "rotation", "scale", "opacity", "sh_dc", "sh_rest",
                            "appearance_code", "image_embedding", "mlp"},
                           "lr");
            take(l, "position_init", c.lr.position_init);
            take(l, "position_final", c.lr.position_final);
            take(l, "rotation", c.lr.rotation);
            take(l, "scale", c.lr.scale);
            take(l, "opacity", c.lr.opacity);
            take(l, "sh_dc", c.lr.sh_dc);
            take(l, "sh_rest", c.lr.sh_rest);
            take(l, "appearance_code", c.lr.appearance_code);
            take(l, "image_embedding", c.lr.image_embedding);
            take(l, "mlp", c.lr.mlp);
        }
        take(j, "lambda_dssim", c.weights.lambda_dssim);
        take(j, "lambda_op", c.weights.lambda_op);
        take(j, "lambda_depth", c.weights.lambda_depth);
        if (j.contains("depth_loss_mode")) c.depth_mode = parse_depth_loss_mode(j.at("depth_loss_mode").get<std::string>());
        take(j, "opacity_regularization", c.opacity_regularization);
        take(j, "depth_supervision", c.depth_supervision);
        take(j, "use_appearance", c.use_appearance);
        if (j.contains("pseudo")) {
            const json& p = j.at("pseudo");
            reject_unknown(p,
                           {"every", "count", "resolution", "fov_deg", "lookat_sigma", "elevation_start",
                            "elevation_end", "radius_start", "radius_end"},
                           "pseudo");
            take(p, "every", c.pseudo.every);
            take(p, "count", c.pseudo.count);
            take(p, "resolution", c.pseudo.resolution);
            take(p, "fov_deg", c.pseudo.fov_deg);
            take(p, "lookat_sigma", c.pseudo.lookat_sigma);
            take(p, "elevation_start", c.pseudo.elevation_start);
            take(p, "elevation_end", c.pseudo.elevation_end);
            take(p, "radius_start", c.pseudo.radius_start);
            take(p, "radius_end", c.pseudo.radius_end);
        }
        take(j, "oracle_concurrency", c.oracle_concurrency);
        if (j.contains("render_mode")) {
            const auto m = j.at("render_mode").get<std::string>();
            if (m == "deterministic") {
                c.render.mode = RenderMode::deterministic;
            } else if (m == "parallel") {
                c.render.mode = RenderMode::parallel;
            } else {
                throw ContractError("render_mode must be 'deterministic' or 'parallel'");
            }
        }
        take(j, "render_threads", c.render.threads);
        take(j, "finite_check_interval", c.finite_check_interval);
        take(j, "seed", c.seed);
    } catch (const json::exception& e) {
        throw ContractError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

json synth_spec_to_json(const SyntheticSceneSpec& s) {
    return json{{"seed", s.seed},
                {"num_gaussians", s.num_gaussians},
                {"block_size", s.block_size},
                {"num_buildings", s.num_buildings},
                {"num_views", s.num_views},
                {"num_heldout", s.num_heldout},
                {"num_low_views", s.num_low_views},
                {"elevation_min", s.elevation_min},
                {"elevation_max", s.elevation_max},
                {"low_elevation", s.low_elevation},
                {"radius", s.radius},
                {"low_radius", s.low_radius},
                {"fov_deg", s.fov_deg},
                {"resolution", s.resolution},
                {"dates", s.dates},
                {"perturb", s.perturb},
                {"seed_jitter", s.seed_jitter}};
}

SyntheticSceneSpec synth_spec_from_json(const json& j, SyntheticSceneSpec s) {
    reject_unknown(j,
                   {"seed", "num_gaussians", "block_size", "num_buildings", "num_views", "num_heldout",
                    "num_low_views", "elevation_min", "elevation_max", "low_elevation", "radius", "low_radius",
                    "fov_deg", "resolution", "dates", "perturb", "seed_jitter"},
                   "scene spec");
    try {
        take(j, "seed", s.seed);
        take(j, "num_gaussians", s.num_gaussians);
        take(j, "block_size", s.block_size);
        take(j, "num_buildings", s.num_buildings);
        take(j, "num_views", s.num_views);
        take(j, "num_heldout", s.num_heldout);
        take(j, "num_low_views", s.num_low_views);
        take(j, "elevation_min", s.elevation_min);
        take(j, "elevation_max", s.elevation_max);
        take(j, "low_elevation", s.low_elevation);
        take(j, "radius", s.radius);
        take(j, "low_radius", s.low_radius);
        take(j, "fov_deg", s.fov_deg);
        take(j, "resolution", s.resolution);
        take(j, "dates", s.dates);
        take(j, "perturb", s.perturb);
        take(j, "seed_jitter", s.seed_jitter);
    } catch (const json::exception& e) {
        throw ContractError(std::string("scene spec: ") + e.what());
    }
    s.validate();
    return s;
}

json idu_plan_to_json(const IduPlan& p) {
    json pts = json::array();
    for (const Vec3& q : p.grid.points) pts.push_back({q.x(), q.y(), q.z()});
    return json{{"episodes", p.episodes},
                {"views_per_point", p.views_per_point},
                {"samples_per_view", p.samples_per_view},
                {"lookat_points", pts},
                {"elevations", vec_to_json(p.schedule.elevations_deg)},
                {"radii", vec_to_json(p.schedule.radii)},
                {"source_prompt", p.refiner.source_prompt},
                {"target_prompt", p.refiner.target_prompt},
                {"n_min", p.refiner.n_min},
                {"n_max", p.refiner.n_max},
                {"episode", train_config_to_json(p.episode_config)},
                {"fov_deg", p.intrinsics.fov_deg},
                {"render_resolution", p.intrinsics.resolution},
                {"refine_concurrency", p.refine_concurrency},
                {"refine_retries", p.refine_retries},
                {"refined_fraction", p.refined_fraction},
                {"seed", p.seed}};
}

IduPlan idu_plan_from_json(const json& j, IduPlan p) {
    reject_unknown(j,
                   {"preset", "episodes", "views_per_point", "samples_per_view", "lookat_points", "elevations",
                    "radii", "source_prompt", "target_prompt", "n_min", "n_max", "episode", "fov_deg",
                    "render_resolution", "refine_concurrency", "refine_retries", "refined_fraction", "seed"},
                   "idu plan");
    try {
        if (j.contains("preset")) p = IduPlan::preset(j.at("preset").get<std::string>());
        take(j, "episodes", p.episodes);
        take(j, "views_per_point", p.views_per_point);
        take(j, "samples_per_view", p.samples_per_view);
        if (j.contains("lookat_points")) {
            p.grid.points.clear();
            for (const auto& q : j.at("lookat_points")) {
                p.grid.points.emplace_back(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>());
            }
        }
        take(j, "elevations", p.schedule.elevations_deg);
        take(j, "radii", p.schedule.radii);
        take(j, "source_prompt", p.refiner.source_prompt);
        take(j, "target_prompt", p.refiner.target_prompt);
        take(j, "n_min", p.refiner.n_min);
        take(j, "n_max", p.refiner.n_max);
        if (j.contains("episode")) p.episode_config = train_config_from_json(j.at("episode"), p.episode_config);
        take(j, "fov_deg", p.intrinsics.fov_deg);
        take(j, "render_resolution", p.intrinsics.resolution);
        take(j, "refine_concurrency", p.refine_concurrency);
        take(j, "refine_retries", p.refine_retries);
        take(j, "refined_fraction", p.refined_fraction);
        take(j, "seed", p.seed);
    } catch (const json::exception& e) {
        throw ContractError(std::string("idu plan: ") + e.what());
    }
    return p;
}

json load_json_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), e.byte);
    }
}

std::optional<std::uint64_t> seed_from_env() {
    const char* v = std::getenv("SKYFALL_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    const std::string s(v);
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(s, &used, 10);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.front() == '-') throw ContractError("SKYFALL_SEED must be a non-negative integer");
    return static_cast<std::uint64_t>(x);
}

} // namespace skyfall
