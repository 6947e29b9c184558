#include "support.hpp"

#include "skyfall/renderer.hpp"

#include <doctest.h>

#include <cstdio>

using namespace skyfall;
using namespace skyfall::testing;

TEST_CASE("render gradients match central differences") {
    int checked = 0, passed = 0;
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const GradCheckResult r = check_render_gradients(seed, 30, 24, 30);
        checked += r.checked;
        passed += r.passed;
        INFO("seed " << seed << " passed " << r.passed << "/" << r.checked << " worst " << r.worst);
        CHECK(r.pass_rate() >= 0.9);
    }
    MESSAGE("gradient agreement " << passed << "/" << checked);
    CHECK(double(passed) / checked >= 0.95);
}

TEST_CASE("depth-only upstream gradient matches central differences") {
    RandomScene s = random_scene(11, 20, 24, 24);
    RenderUpstream up = random_upstream(12, 24, 24);
    for (double& x : up.d_rgb.data) x = 0.0;
    for (double& x : up.d_alpha.data) x = 0.0;
    const RenderGradients g = render_backward(s.cloud, s.camera, std::nullopt, up);
    const double h = 1e-6;
    int checked = 0, passed = 0;
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        if (!g.visible[i]) continue;
        for (ParamClass c : {ParamClass::position, ParamClass::scale, ParamClass::opacity, ParamClass::rotation}) {
            for (std::size_t j = 0; j < param_span(s.cloud.gaussians[i], c).size(); ++j) {
                GaussianCloud plus = s.cloud, minus = s.cloud;
                param_span(plus.gaussians[i], c)[j] += h;
                param_span(minus.gaussians[i], c)[j] -= h;
                const double numeric =
                    (probe(plus, s.camera, std::nullopt, up) - probe(minus, s.camera, std::nullopt, up)) / (2 * h);
                ++checked;
                if (grad_agrees(param_span(g.d_gaussians[i], c)[j], numeric)) ++passed;
            }
        }
    }
    REQUIRE(checked > 0);
    CHECK(double(passed) / checked >= 0.95);
}

TEST_CASE("gradients do not depend on the thread count") {
    RandomScene s = random_scene(5, 40, 32, 32);
    const RenderUpstream up = random_upstream(6, 32, 32);
    const auto ctx = std::optional<AppearanceContext>(AppearanceContext::for_image(s.appearance, 0));
    RenderOptions par;
    par.mode = RenderMode::parallel;
    par.threads = 3;
    const RenderGradients a = render_backward(s.cloud, s.camera, ctx, up);
    const RenderGradients b = render_backward(s.cloud, s.camera, ctx, up, par);
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        for (ParamClass c : kAllParamClasses) {
            const auto x = param_span(a.d_gaussians[i], c);
            const auto y = param_span(b.d_gaussians[i], c);
            CHECK(std::equal(x.begin(), x.end(), y.begin()));
        }
    }
    CHECK(a.d_mlp_params == b.d_mlp_params);
    CHECK(a.d_embedding == b.d_embedding);
}
