// skyfall command line: synthetic data, reconstruction, dataset updates, rendering, evaluation.
#include "skyfall/bundle.hpp"
#include "skyfall/config.hpp"
#include "skyfall/errors.hpp"
#include "skyfall/eval.hpp"
#include "skyfall/idu.hpp"
#include "skyfall/ply.hpp"
#include "skyfall/renderer.hpp"
#include "skyfall/synth.hpp"
#include "skyfall/train.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace skyfall;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kBackend = 4 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json section(const json& cfg, const char* key) {
    return cfg.contains(key) ? cfg.at(key) : json::object();
}

// Config-file problems are usage errors, not data errors.
template <class F>
auto as_usage(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    } catch (const ParseError& e) {
        throw UsageError(e.what());
    } catch (const IoError& e) {
        throw UsageError(e.what());
    }
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    return as_usage([&] { return load_json_file(path); });
}

// Precedence: config file < SKYFALL_SEED < --seed.
std::uint64_t resolve_seed(std::uint64_t config_seed, const std::optional<std::uint64_t>& flag) {
    std::uint64_t seed = config_seed;
    if (auto env = as_usage([] { return seed_from_env(); })) seed = *env;
    if (flag) seed = *flag;
    return seed;
}

std::vector<double> parse_list(const std::string& text, std::size_t n, const char* what) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string(what) + ": '" + item + "' is not a number");
        }
    }
    if (v.size() != n) throw UsageError(std::string(what) + " needs " + std::to_string(n) + " comma-separated values");
    return v;
}

Dataset dataset_from_bundle(const SceneBundle& b, const fs::path& bundle_path) {
    Dataset d;
    for (const ManifestEntry& m : b.manifest) {
        if (m.camera < 0 || m.camera >= static_cast<int>(b.cameras.size())) {
            throw ContractError("manifest entry '" + m.image + "' references a missing camera");
        }
        TrainingImage t;
        t.camera = b.cameras[m.camera];
        t.image = read_png(bundle_path.parent_path() / m.image);
        t.embedding_index = m.embedding_index;
        t.provenance = m.provenance;
        d.push_back(std::move(t));
    }
    return d;
}

std::unique_ptr<DepthOracle> make_oracle(const std::string& kind, const std::string& scene_dir, std::uint64_t seed) {
    if (kind == "none") return nullptr;
    if (kind == "mock-affine") {
        if (scene_dir.empty()) throw UsageError("--oracle mock-affine needs --scene (ground truth source)");
        return std::make_unique<MockAffineOracle>(read_scene(scene_dir).ground_truth, seed);
    }
    throw UsageError("unknown oracle '" + kind + "' (expected none or mock-affine)");
}

std::unique_ptr<std::ofstream> open_log(const std::string& path) {
    if (path.empty()) return nullptr;
    auto f = std::make_unique<std::ofstream>(path);
    if (!*f) throw IoError("cannot open log '" + path + "'");
    *f << "iter,loss_color,loss_op,loss_depth,num_gaussians\n";
    return f;
}

struct SynthArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> dates, resolution, views;
    std::optional<double> perturb;
};

int run_synth(const SynthArgs& a) {
    const json cfg = load_config(a.config);
    SyntheticSceneSpec spec = as_usage([&] { return synth_spec_from_json(section(cfg, "scene")); });
    spec.seed = resolve_seed(cfg.value("seed", spec.seed), a.seed);
    if (a.dates) spec.dates = *a.dates;
    if (a.perturb) spec.perturb = *a.perturb;
    if (a.resolution) spec.resolution = *a.resolution;
    if (a.views) spec.num_views = *a.views;
    as_usage([&] { spec.validate(); return 0; });
    const SyntheticScene scene = synth_scene(spec);
    write_scene(a.out, scene);
    std::printf("scene written to %s (%zu training views, hash %s)\n", a.out.c_str(), scene.train.size(),
                dataset_hash(scene).c_str());
    return kOk;
}

struct TrainArgs {
    std::string config, scene, out, log, oracle = "mock-affine";
    std::optional<std::uint64_t> seed;
    std::optional<int> iters;
};

int run_train(const TrainArgs& a) {
    const json cfg = load_config(a.config);
    TrainConfig tc = as_usage([&] {
        json t = section(cfg, "train");
        TrainConfig base = TrainConfig::reconstruction();
        if (a.iters) {
            // Fit the densification window into short runs.
            base.total_iters = *a.iters;
            base.densify_end = std::min(base.densify_end, std::max(1, *a.iters * 7 / 10));
            base.densify_start = std::min(base.densify_start, base.densify_end - 1);
            t.erase("total_iters");
        }
        return train_config_from_json(t, base);
    });
    tc.seed = resolve_seed(cfg.value("seed", tc.seed), a.seed);

    const SyntheticScene scene = read_scene(a.scene);
    auto oracle = make_oracle(a.oracle, a.scene, tc.seed);
    if (!oracle) tc.depth_supervision = false;
    auto log = open_log(a.log);

    SceneModel init;
    init.cloud = scene.seed_cloud;
    const SceneModel model = reconstruct_stage(init, scene.train, tc, oracle.get(), log.get());

    SceneBundle b;
    b.model = model;
    b.seed = tc.seed;
    b.config = {{"train", train_config_to_json(tc)}};
    const fs::path out(a.out);
    const fs::path base = out.has_parent_path() ? out.parent_path() : fs::path(".");
    for (std::size_t i = 0; i < scene.train.size(); ++i) {
        b.cameras.push_back(scene.train[i].camera);
        char name[64];
        std::snprintf(name, sizeof name, "images/train_%03zu.png", i);
        const fs::path rel = fs::relative(fs::absolute(fs::path(a.scene) / name), fs::absolute(base));
        b.manifest.push_back({rel.generic_string(), static_cast<int>(i), scene.train[i].embedding_index,
                              Provenance::satellite});
    }
    save_bundle(out, b);
    std::printf("trained %d iterations, %zu gaussians -> %s\n", tc.total_iters, model.cloud.size(), a.out.c_str());
    return kOk;
}

struct IduArgs {
    std::string config, ckpt, refiner = "mock:identity", out, log, preset, scene, oracle = "none";
    std::optional<std::uint64_t> seed;
    std::optional<int> episodes, iters, resolution;
};

int run_idu(const IduArgs& a) {
    const json cfg = load_config(a.config);
    IduPlan plan = as_usage([&] {
        IduPlan p = a.preset.empty() ? IduPlan::preset("dfc2019") : IduPlan::preset(a.preset);
        p = idu_plan_from_json(section(cfg, "idu"), p);
        if (a.episodes) {
            p.episodes = *a.episodes;
            const CurriculumSchedule full = curriculum_schedule(5, 85.0, 45.0, 300.0, 250.0);
            if (p.episodes >= 2) {
                p.schedule = curriculum_schedule(p.episodes, 85.0, 45.0, p.schedule.radii.empty() ? 300.0 : p.schedule.radii.front(),
                                                 p.schedule.radii.empty() ? 250.0 : p.schedule.radii.back());
            } else if (p.episodes == 1) {
                p.schedule = CurriculumSchedule{{full.elevations_deg.front()}, {full.radii.front()}};
            } else {
                p.schedule = CurriculumSchedule{};
            }
        }
        if (a.iters) {
            p.episode_config.total_iters = *a.iters;
            p.episode_config.densify_end = std::max(1, *a.iters * 9 / 10);
            p.episode_config.densify_start = std::min(p.episode_config.densify_start, p.episode_config.densify_end - 1);
        }
        if (a.resolution) p.intrinsics.resolution = *a.resolution;
        p.validate();
        return p;
    });
    plan.seed = resolve_seed(cfg.value("seed", plan.seed), a.seed);
    plan.episode_config.seed = plan.seed;

    const SceneBundle in = load_bundle(a.ckpt);
    const Dataset satellite = dataset_from_bundle(in, a.ckpt);
    auto refiner = as_usage([&] { return make_refiner(a.refiner); });
    auto oracle = make_oracle(a.oracle, a.scene, plan.seed);
    if (!oracle) plan.episode_config.depth_supervision = false;
    auto log = open_log(a.log);

    const IduResult r = idu_run(in.model, plan, satellite, *refiner, oracle.get(), log.get());

    SceneBundle outb = in;
    outb.model = r.model;
    outb.seed = plan.seed;
    outb.config["idu"] = idu_plan_to_json(plan);
    outb.config["fixed_embedding_index"] = r.fixed_embedding_index;
    json records = json::array();
    for (const EpisodeRecord& e : r.episodes) {
        records.push_back({{"episode", e.episode},
                           {"elevation_deg", e.elevation_deg},
                           {"radius", e.radius},
                           {"refined_images", e.refined_images},
                           {"gaussians", e.gaussians}});
    }
    outb.config["episodes"] = records;
    // Manifest paths are relative to the bundle; rebase them for the new location.
    const fs::path from = fs::absolute(fs::path(a.ckpt)).parent_path();
    const fs::path to = fs::absolute(fs::path(a.out)).parent_path();
    for (ManifestEntry& m : outb.manifest) m.image = fs::relative(from / m.image, to).generic_string();
    save_bundle(a.out, outb);
    if (!r.completed) {
        std::fprintf(stderr, "dataset update stopped early: %s\nlast good model written to %s\n",
                     r.diagnostics.c_str(), a.out.c_str());
        return r.backend_failure ? kBackend : kData;
    }
    std::printf("%zu episodes, %zu gaussians -> %s\n", r.episodes.size(), r.model.cloud.size(), a.out.c_str());
    return kOk;
}

struct RenderArgs {
    std::string ckpt, orbit, out, lookat = "0,0,0";
    int resolution = 512;
    double fov = 20.0;
    std::optional<int> embedding;
    bool parallel = false;
};

int run_render(const RenderArgs& a) {
    const auto orbit = parse_list(a.orbit, 3, "--orbit");
    const auto look = parse_list(a.lookat, 3, "--lookat");
    if (orbit[2] < 1 || orbit[2] != std::floor(orbit[2])) throw UsageError("--orbit view count must be a positive integer");
    if (!(orbit[0] > 0.0 && orbit[0] < 90.0) || !(orbit[1] > 0.0)) {
        throw UsageError("--orbit needs elevation in (0, 90) and a positive radius");
    }
    if (a.resolution < 1 || a.resolution > 4096) throw UsageError("--resolution must lie in [1, 4096]");
    const SceneBundle b = load_bundle(a.ckpt, false);
    std::optional<AppearanceContext> ctx;
    if (b.model.appearance.num_images() > 0) {
        int idx = a.embedding.value_or(b.config.value("fixed_embedding_index", 0));
        if (idx < 0) idx = 0;
        if (idx >= b.model.appearance.num_images()) throw UsageError("--embedding index out of range");
        ctx = AppearanceContext::for_image(b.model.appearance, idx);
    }
    LookatGrid grid = LookatGrid::explicit_points({Vec3(look[0], look[1], look[2])});
    const auto cams = orbit_views(grid, orbit[1], orbit[0], static_cast<int>(orbit[2]), {a.fov, a.resolution});
    fs::create_directories(a.out);
    RenderOptions opt;
    opt.mode = a.parallel ? RenderMode::parallel : RenderMode::deterministic;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "view_%03zu.png", i);
        write_png(fs::path(a.out) / name, render(b.model.cloud, cams[i], ctx, opt).rgb);
    }
    std::printf("rendered %zu views to %s\n", cams.size(), a.out.c_str());
    return kOk;
}

int run_eval(const std::string& pred, const std::string& ref, const std::string& csv) {
    const EvalReport rep = eval_report(pred, ref);
    std::fputs(rep.to_table().c_str(), stdout);
    if (!csv.empty()) {
        std::ofstream f(csv);
        if (!f) throw IoError("cannot write '" + csv + "'");
        f << rep.to_csv();
    }
    return kOk;
}

int run_export(const std::string& ckpt, const std::string& out, bool dbl) {
    const SceneBundle b = load_bundle(ckpt, false);
    export_ply(out, b.model.cloud, dbl ? PlyPrecision::float64 : PlyPrecision::float32);
    std::printf("%zu gaussians -> %s\n", b.model.cloud.size(), out.c_str());
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian splatting reconstruction from satellite views with iterative dataset updates"};
    app.require_subcommand(1);
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");
    app.add_flag("-q,--quiet", quiet, "warnings and errors only");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth-scene", "generate a synthetic city block and its satellite views");
    synth->add_option("--config", sa.config, "JSON config file")->check(CLI::ExistingFile);
    synth->add_option("--seed", sa.seed, "random seed");
    synth->add_option("--out", sa.out, "output directory")->required();
    synth->add_option("--dates", sa.dates, "number of acquisition dates")->check(CLI::PositiveNumber);
    synth->add_option("--perturb", sa.perturb, "per-date brightness amplitude in [0,1)");
    synth->add_option("--resolution", sa.resolution, "image side in pixels");
    synth->add_option("--views", sa.views, "training views");

    TrainArgs ta;
    auto* train = app.add_subcommand("train-sat", "reconstruct from the satellite views of a scene directory");
    train->add_option("--config", ta.config, "JSON config file")->check(CLI::ExistingFile);
    train->add_option("--scene", ta.scene, "scene directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--iters", ta.iters, "training iterations")->check(CLI::NonNegativeNumber);
    train->add_option("--out", ta.out, "checkpoint path")->required();
    train->add_option("--seed", ta.seed, "random seed");
    train->add_option("--log", ta.log, "CSV progress log");
    train->add_option("--oracle", ta.oracle, "depth oracle: mock-affine or none");

    IduArgs ia;
    auto* idu = app.add_subcommand("idu", "iterative dataset update from a checkpoint");
    idu->add_option("--config", ia.config, "JSON config file")->check(CLI::ExistingFile);
    idu->add_option("--ckpt", ia.ckpt, "input checkpoint")->required()->check(CLI::ExistingFile);
    idu->add_option("--refiner", ia.refiner, "mock:identity | mock:noise[:s] | mock:blur[:s] | http://host:port");
    idu->add_option("--episodes", ia.episodes, "number of episodes")->check(CLI::NonNegativeNumber);
    idu->add_option("--iters", ia.iters, "iterations per episode")->check(CLI::PositiveNumber);
    idu->add_option("--resolution", ia.resolution, "render resolution")->check(CLI::Range(1, 4096));
    idu->add_option("--preset", ia.preset, "dfc2019 or googleearth");
    idu->add_option("--scene", ia.scene, "scene directory (ground truth for --oracle mock-affine)");
    idu->add_option("--oracle", ia.oracle, "depth oracle: none or mock-affine");
    idu->add_option("--out", ia.out, "output checkpoint")->required();
    idu->add_option("--seed", ia.seed, "random seed");
    idu->add_option("--log", ia.log, "CSV progress log");

    RenderArgs ra;
    auto* rend = app.add_subcommand("render", "render orbit views of a checkpoint");
    rend->add_option("--ckpt", ra.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    rend->add_option("--orbit", ra.orbit, "elevation,radius,n")->required();
    rend->add_option("--lookat", ra.lookat, "x,y,z look-at point");
    rend->add_option("--resolution", ra.resolution, "image side in pixels");
    rend->add_option("--fov", ra.fov, "horizontal field of view in degrees");
    rend->add_option("--embedding", ra.embedding, "appearance embedding index");
    rend->add_flag("--parallel", ra.parallel, "multi-threaded rasterization");
    rend->add_option("--out", ra.out, "output directory")->required();

    std::string pred, ref, csv;
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM of predicted against reference images");
    ev->add_option("--pred", pred, "prediction directory")->required();
    ev->add_option("--ref", ref, "reference directory")->required();
    ev->add_option("--csv", csv, "also write the table as CSV");

    std::string ply_ckpt, ply_out;
    bool ply_double = false;
    auto* exp = app.add_subcommand("export-ply", "write the Gaussians as a splat PLY");
    exp->add_option("--ckpt", ply_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    exp->add_option("--out", ply_out, "PLY path")->required();
    exp->add_flag("--double", ply_double, "store float64 properties (lossless)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

    try {
        if (*synth) return run_synth(sa);
        if (*train) return run_train(ta);
        if (*idu) return run_idu(ia);
        if (*rend) return run_render(ra);
        if (*ev) return run_eval(pred, ref, csv);
        if (*exp) return run_export(ply_ckpt, ply_out, ply_double);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kUsage;
    } catch (const OracleError& e) {
        std::fprintf(stderr, "backend failure: %s\n", e.what());
        return kBackend;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kData;
    }
    return kUsage;
}
