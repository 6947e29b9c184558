// Acceptance runner: one PASS/FAIL line per criterion. Optional arguments pick
// criteria by number, e.g. `acceptance 2 3 7`.
#include "support.hpp"

#include "skyfall/bundle.hpp"
#include "skyfall/depth_oracle.hpp"
#include "skyfall/errors.hpp"
#include "skyfall/geometry.hpp"
#include "skyfall/idu.hpp"
#include "skyfall/losses.hpp"
#include "skyfall/ply.hpp"
#include "skyfall/refiner.hpp"
#include "skyfall/synth.hpp"
#include "skyfall/train.hpp"
#include "skyfall/view_sampling.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>

using namespace skyfall;
using namespace skyfall::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool ok = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared synthetic reconstruction runs.

const SyntheticScene& block_scene() {
    static const SyntheticScene s = [] {
        SyntheticSceneSpec spec; // 200 Gaussians, 20 views, 4 held-out, 8 low views
        spec.seed = 1;
        return synth_scene(spec);
    }();
    return s;
}

const MockAffineOracle& block_oracle() {
    static const MockAffineOracle o(block_scene().ground_truth, 7);
    return o;
}

struct Run {
    SceneModel model;
    double seconds = 0.0;
};

TrainConfig block_config(double lambda_op, bool depth) {
    TrainConfig c = TrainConfig::reconstruction();
    c.total_iters = 5000;
    c.densify_start = c.total_iters / 30;
    c.densify_end = c.total_iters * 7 / 10;
    c.weights.lambda_op = lambda_op;
    c.opacity_regularization = lambda_op > 0.0;
    c.depth_supervision = depth;
    c.pseudo.resolution = 64;
    c.pseudo.lookat_sigma = 20.0;
    c.pseudo.count = 24;
    c.seed = 0;
    return c;
}

const Run& block_run(double lambda_op, bool depth) {
    static std::map<std::pair<double, bool>, Run> cache;
    auto key = std::make_pair(lambda_op, depth);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    spdlog::info("training block scene: lambda_op {} depth {}", lambda_op, depth);
    SceneModel init;
    init.cloud = block_scene().seed_cloud;
    const auto t0 = Clock::now();
    Run r;
    r.model = reconstruct_stage(init, block_scene().train, block_config(lambda_op, depth),
                                depth ? &block_oracle() : nullptr);
    r.seconds = seconds_since(t0);
    spdlog::info("  done in {:.1f} s, {} Gaussians", r.seconds, r.model.cloud.size());
    return cache.emplace(key, std::move(r)).first->second;
}

double heldout_psnr(const SceneModel& m, const Dataset& views, int embedding = 0) {
    std::optional<AppearanceContext> ctx;
    if (m.appearance.num_images() > 0) ctx = AppearanceContext::for_image(m.appearance, embedding);
    double sum = 0.0;
    for (const TrainingImage& v : views) {
        Image r = render(m.cloud, v.camera, ctx).rgb;
        for (double& x : r.data) x = std::clamp(x, 0.0, 1.0);
        sum += psnr(r, v.image);
    }
    return sum / static_cast<double>(views.size());
}

double mid_opacity_fraction(const GaussianCloud& c) {
    if (c.size() == 0) return 0.0;
    std::size_t mid = 0;
    for (const Gaussian& g : c.gaussians) {
        const double a = g.opacity();
        mid += a > 0.05 && a < 0.95;
    }
    return double(mid) / double(c.size());
}

double low_view_depth_correlation(const SceneModel& m) {
    const SyntheticScene& s = block_scene();
    double sum = 0.0;
    for (std::size_t k = 0; k < s.low.size(); ++k) {
        const RenderOutput out = render(m.cloud, s.low[k].camera);
        const Mask mask = depth_mask_from_alpha(out.alpha);
        int valid = 0;
        for (auto b : mask) valid += b;
        sum += valid >= 2 ? std::abs(pearson(out.depth, s.low_depth[k], &mask)) : 0.0;
    }
    return sum / static_cast<double>(s.low.size());
}

// ---------------------------------------------------------------------------

Outcome c1_gradients() {
    const auto t0 = Clock::now();
    int checked = 0, passed = 0;
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const int count = 10 + static_cast<int>(seed % 5) * 10; // 10..50
        const GradCheckResult r = check_render_gradients(seed, count, 32, 40);
        checked += r.checked;
        passed += r.passed;
    }
    const double t = seconds_since(t0);
    const double rate = double(passed) / checked;
    return {rate >= 0.95 && t < 60.0, fmt("%d/%d coordinates within 1e-3 (%.2f%%), %.1f s", passed, checked, 100 * rate, t)};
}

Outcome c2_projection() {
    double worst = 0.0;
    for (double f : {100.0, 500.0, 1200.0})
        for (double sigma : {0.05, 0.7, 3.0})
            for (double z : {1.5, 10.0, 250.0}) {
                CameraPinhole cam;
                cam.fx = cam.fy = f;
                cam.cx = cam.cy = 32.0;
                cam.width = cam.height = 64;
                const auto p = project_gaussian(Vec3(0, 0, z), sigma * sigma * Mat3::Identity(), cam);
                if (!p) return {false, "on-axis Gaussian was culled"};
                const double d = std::pow(f * sigma / z, 2) + 0.3;
                worst = std::max({worst, std::abs(p->cov2d(0, 0) - d), std::abs(p->cov2d(1, 1) - d),
                                  std::abs(p->cov2d(0, 1)), std::abs(p->cov2d(1, 0))});
            }
    return {worst <= 1e-9, fmt("max deviation %.3g over 27 cases", worst)};
}

Outcome c3_compositing() {
    std::mt19937_64 rng(77);
    const CameraPinhole cam = one_pixel_camera();
    double worst = 0.0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        const GaussianCloud cloud = pixel_stack(rng, 1 + trial % 6);
        const RenderOutput out = render(cloud, cam);
        const PixelValue ref = brute_force_pixel(cloud, cam, 0, 0);
        for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(out.rgb.at(0, 0, c) - ref.rgb[c]));
        worst = std::max({worst, std::abs(out.depth.at(0, 0) - ref.depth), std::abs(out.alpha.at(0, 0) - ref.alpha)});
    }
    return {worst <= 1e-12, fmt("%d stacks, max deviation %.3g", trials, worst)};
}

Outcome c4_losses() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image x(24, 20, 3), d(24, 20, 1), g(24, 20, 1);
    for (double& v : x.data) v = u(rng);
    for (double& v : d.data) v = 1.0 + 50.0 * u(rng);
    for (double& v : g.data) v = u(rng);

    double self = 0.0;
    for (double lambda : {0.0, 0.2, 1.0}) self = std::max(self, std::abs(loss_color(x, x, lambda)));
    const std::vector<double> half{0.5};
    const double ent = std::abs(opacity_entropy(half) - std::numbers::ln2);

    double affine = 0.0, depth = 0.0;
    for (auto [a, b] : {std::pair{2.0, 3.0}, {0.01, -40.0}, {1e3, 1e4}}) {
        Image y = d;
        for (double& v : y.data) v = a * v + b;
        affine = std::max(affine, std::abs(pearson(y, g) - pearson(d, g)));
        depth = std::max(depth, std::abs(loss_depth(y, d, nullptr)));
    }
    const bool ok = self == 0.0 && ent <= 1e-9 && affine <= 1e-6 && depth <= 1e-9;
    return {ok, fmt("self %.3g, entropy %.3g, affine %.3g, depth %.3g", self, ent, affine, depth)};
}

Outcome c5_opacity() {
    const Run& a = block_run(0.0, false);
    const Run& b = block_run(10.0, false);
    const double fa = mid_opacity_fraction(a.model.cloud), fb = mid_opacity_fraction(b.model.cloud);
    const double t = a.seconds + b.seconds;
    return {fb < fa && t < 15 * 60.0,
            fmt("mid-opacity fraction %.4f (lambda 0, N=%zu) vs %.4f (lambda 10, N=%zu), %.0f s", fa,
                a.model.cloud.size(), fb, b.model.cloud.size(), t)};
}

Outcome c6_depth() {
    const Run& off = block_run(10.0, false);
    const Run& on = block_run(10.0, true);
    const double p_off = low_view_depth_correlation(off.model), p_on = low_view_depth_correlation(on.model);
    const double t = off.seconds + on.seconds;
    return {p_on > p_off && t < 20 * 60.0,
            fmt("low-view |pearson| %.4f with depth vs %.4f without, %.0f s", p_on, p_off, t)};
}

Outcome c7_curriculum() {
    const CurriculumSchedule s = IduPlan::preset("dfc2019").schedule;
    const bool ok = s.elevations_deg == std::vector<double>{85, 75, 65, 55, 45} &&
                    s.radii == std::vector<double>{300, 287.5, 275, 262.5, 250};
    std::string e, r;
    for (double v : s.elevations_deg) e += fmt("%g ", v);
    for (double v : s.radii) r += fmt("%g ", v);
    return {ok, "E = " + e + "R = " + r};
}

IduPlan block_idu_plan() {
    IduPlan plan;
    plan.episodes = 1;
    plan.schedule = CurriculumSchedule{{85.0}, {300.0}};
    plan.grid = LookatGrid::grid(3, 3, 40.0);
    plan.views_per_point = 6;
    plan.samples_per_view = 2;
    plan.intrinsics = ViewIntrinsics{block_scene().spec.fov_deg, block_scene().spec.resolution};
    plan.episode_config = TrainConfig::episode();
    plan.episode_config.total_iters = 1000;
    plan.episode_config.densify_start = 500;
    plan.episode_config.densify_end = 900;
    plan.episode_config.depth_supervision = false;
    plan.seed = 3;
    return plan;
}

Outcome c8_idu_noop() {
    const Run& base = block_run(10.0, false);
    const auto t0 = Clock::now();
    const IduResult r = idu_run(base.model, block_idu_plan(), block_scene().train, IdentityRefiner());
    if (!r.completed) return {false, "episode failed: " + r.diagnostics};
    const int emb = r.fixed_embedding_index;
    const double before = heldout_psnr(base.model, block_scene().heldout, emb);
    const double after = heldout_psnr(r.model, block_scene().heldout, emb);
    return {before - after <= 0.5,
            fmt("held-out PSNR %.2f -> %.2f dB (drop %.2f), %.0f s", before, after, before - after, seconds_since(t0))};
}

Outcome c9_mixing() {
    MixedSampler sampler(108, 20, 0.75, 2024);
    int refined = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) refined += sampler.next().pool == Provenance::refined;
    const double f = double(refined) / n;
    return {f >= 0.73 && f <= 0.77, fmt("refined fraction %.4f", f)};
}

SceneBundle end_to_end(const SyntheticScene& s) {
    TrainConfig c = TrainConfig::reconstruction();
    c.total_iters = 300;
    c.densify_start = 50;
    c.densify_end = 250;
    c.densify_interval = 50;
    c.pseudo.every = 10;
    c.pseudo.count = 4;
    c.pseudo.resolution = 24;
    c.pseudo.lookat_sigma = 10.0;
    c.seed = 11;
    const MockAffineOracle oracle(s.ground_truth, 5);
    SceneModel init;
    init.cloud = s.seed_cloud;
    const SceneModel m = reconstruct_stage(init, s.train, c, &oracle);

    IduPlan plan;
    plan.episodes = 1;
    plan.schedule = CurriculumSchedule{{85.0}, {300.0}};
    plan.grid = LookatGrid::grid(2, 2, 30.0);
    plan.views_per_point = 2;
    plan.intrinsics = ViewIntrinsics{s.spec.fov_deg, s.spec.resolution};
    plan.episode_config = TrainConfig::episode();
    plan.episode_config.total_iters = 100;
    plan.episode_config.densify_start = 20;
    plan.episode_config.densify_end = 80;
    plan.episode_config.densify_interval = 20;
    plan.episode_config.pseudo = c.pseudo;
    plan.seed = 12;
    const IduResult r = idu_run(m, plan, s.train, NoiseRefiner(0.02), &oracle);
    if (!r.completed) throw std::runtime_error("end-to-end dataset update failed: " + r.diagnostics);
    SceneBundle b;
    b.model = r.model;
    b.seed = 11;
    b.config = {{"fixed_embedding_index", r.fixed_embedding_index}};
    for (const TrainingImage& t : s.train) b.cameras.push_back(t.camera);
    return b;
}

Outcome c10_determinism() {
    const auto t0 = Clock::now();
    SyntheticSceneSpec spec;
    spec.seed = 21;
    spec.num_gaussians = 80;
    spec.num_views = 6;
    spec.num_heldout = 1;
    spec.num_low_views = 1;
    spec.resolution = 32;
    const SyntheticScene s = synth_scene(spec);
    const auto a = encode_bundle(end_to_end(s));
    const auto b = encode_bundle(end_to_end(s));
    const bool same_ckpt = a == b;

    const SceneBundle bundle = decode_bundle(a);
    const GaussianCloud& cloud = bundle.model.cloud;
    const auto ctx = AppearanceContext::for_image(bundle.model.appearance, 0);
    const SceneBundle reloaded = decode_bundle(encode_bundle(bundle));
    const GaussianCloud from_ply = decode_ply(encode_ply(cloud, PlyPrecision::float64));
    bool same_render = true;
    for (const TrainingImage& v : s.heldout) {
        const RenderOutput ref = render(cloud, v.camera, ctx);
        const RenderOutput ply = render(from_ply, v.camera, ctx);
        const RenderOutput bun =
            render(reloaded.model.cloud, v.camera, AppearanceContext::for_image(reloaded.model.appearance, 0));
        same_render = same_render && ref.rgb == ply.rgb && ref.depth == ply.depth && ref.rgb == bun.rgb &&
                      ref.depth == bun.depth && ref.alpha == bun.alpha;
    }
    return {same_ckpt && same_render,
            fmt("checkpoints %s (%zu bytes), round-trip renders %s, %.0f s", same_ckpt ? "identical" : "DIFFER",
                a.size(), same_render ? "identical" : "DIFFER", seconds_since(t0))};
}

Outcome c11_quality() {
    const Run& r = block_run(10.0, false);
    const double p = heldout_psnr(r.model, block_scene().heldout);
    return {p >= 25.0 && r.seconds < 10 * 60.0,
            fmt("held-out PSNR %.2f dB (threshold 25), N=%zu, %.0f s", p, r.model.cloud.size(), r.seconds)};
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    if (std::getenv("SKYFALL_ACCEPTANCE_VERBOSE")) spdlog::set_level(spdlog::level::info);
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"render gradients vs central differences", c1_gradients},
        {"on-axis isotropic projection", c2_projection},
        {"single-pixel stacks vs brute force", c3_compositing},
        {"loss identities", c4_losses},
        {"opacity term reduces semi-transparent Gaussians", c5_opacity},
        {"depth term improves low-view depth correlation", c6_depth},
        {"episode curriculum", c7_curriculum},
        {"identity-refiner episode keeps held-out PSNR", c8_idu_noop},
        {"refined/satellite mixing ratio", c9_mixing},
        {"seeded determinism and lossless round trips", c10_determinism},
        {"synthetic block held-out PSNR", c11_quality},
    };
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!pick.empty() && !pick.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.ok;
        std::printf("%s %2d %s: %s\n", o.ok ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
