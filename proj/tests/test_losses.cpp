#include "skyfall/errors.hpp"
#include "skyfall/losses.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace skyfall;

namespace {

Image random_image(std::uint64_t seed, int w, int h, int c, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(w, h, c);
    for (double& v : img.data) v = u(rng);
    return img;
}

// Direct 2D evaluation of mean SSIM: full 11x11 Gaussian window, zero outside the image.
double ssim_oracle(const Image& x, const Image& y) {
    const int half = 5;
    double w2[11][11];
    double sum = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            const double di = i - half, dj = j - half;
            w2[i][j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
            sum += w2[i][j];
        }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (int c = 0; c < x.channels; ++c)
        for (int py = 0; py < x.height; ++py)
            for (int px = 0; px < x.width; ++px) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const int qx = px + j - half, qy = py + i - half;
                        if (qx < 0 || qy < 0 || qx >= x.width || qy >= x.height) continue;
                        const double wt = w2[i][j] / sum;
                        const double a = x.at(qx, qy, c), b = y.at(qx, qy, c);
                        mx += wt * a;
                        my += wt * b;
                        sxx += wt * a * a;
                        syy += wt * b * b;
                        sxy += wt * a * b;
                    }
                const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
                total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
    return total / static_cast<double>(x.data.size());
}

template <class F>
void check_image_gradient(const Image& x, const Image& grad, F&& f, int samples, std::uint64_t seed,
                          double tol = 1e-6) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, x.data.size() - 1);
    const double h = 1e-6;
    for (int k = 0; k < samples; ++k) {
        const std::size_t i = pick(rng);
        Image p = x, m = x;
        p.data[i] += h;
        m.data[i] -= h;
        const double numeric = (f(p) - f(m)) / (2 * h);
        // Absolute slack covers round-off in the differenced loss values.
        const double scale = std::max(std::abs(numeric), std::abs(grad.data[i]));
        INFO("analytic " << grad.data[i] << " numeric " << numeric);
        CHECK(std::abs(numeric - grad.data[i]) <= tol * scale + 1e-9);
    }
}

} // namespace

TEST_CASE("colour loss of an image with itself is zero") {
    for (double lambda : {0.0, 0.2, 0.5, 1.0}) {
        const Image x = random_image(7, 17, 13, 3);
        CHECK(std::abs(loss_color(x, x, lambda)) <= 1e-15);
        const ImageLoss l = loss_color_with_grad(x, x, lambda);
        CHECK(std::abs(l.value) <= 1e-15);
    }
}

TEST_CASE("colour loss at lambda zero is the mean absolute error") {
    Image a(2, 1, 3, 0.0), b(2, 1, 3, 0.0);
    a.data = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    b.data = {0.2, 0.2, 0.1, 0.4, 1.0, 0.6};
    CHECK(loss_color(a, b, 0.0) == doctest::Approx((0.1 + 0.2 + 0.5) / 6.0).epsilon(1e-14));
}

TEST_CASE("SSIM agrees with a direct two-dimensional window evaluation") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Image x = random_image(seed, 19, 14, 3);
        Image y = x;
        std::mt19937_64 rng(seed + 100);
        std::normal_distribution<double> n(0.0, 0.1);
        for (double& v : y.data) v += n(rng);
        CHECK(ssim(x, y) == doctest::Approx(ssim_oracle(x, y)).epsilon(1e-12));
    }
    const Image x = random_image(4, 9, 9, 1);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("colour loss gradient matches central differences") {
    const Image x = random_image(11, 15, 12, 3);
    const Image y = random_image(12, 15, 12, 3);
    for (double lambda : {0.0, 0.2, 1.0}) {
        const ImageLoss l = loss_color_with_grad(x, y, lambda);
        CHECK(l.value == doctest::Approx(loss_color(x, y, lambda)).epsilon(1e-14));
        check_image_gradient(x, l.grad, [&](const Image& p) { return loss_color(p, y, lambda); }, 40, 13);
    }
}

TEST_CASE("entropy of one half is ln 2 and the extremes vanish") {
    const double half[] = {0.5, 0.5, 0.5};
    CHECK(std::abs(opacity_entropy(half) - std::numbers::ln2) <= 1e-9);
    const double ends[] = {0.0, 1.0};
    CHECK(opacity_entropy(ends) < 2e-5);
    CHECK(opacity_entropy(std::span<const double>{}) == 0.0);
    const double mixed[] = {0.5, 1.0};
    CHECK(opacity_entropy(mixed) == doctest::Approx(0.5 * std::numbers::ln2).epsilon(1e-4));
}

TEST_CASE("entropy gradient with respect to logits matches central differences") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    GaussianCloud cloud;
    for (int i = 0; i < 12; ++i) {
        Gaussian g;
        g.opacity_logit = u(rng);
        cloud.gaussians.push_back(g);
    }
    double value = 0.0;
    const auto grad = opacity_entropy_grad_logits(cloud, &value);
    auto entropy_of = [](const GaussianCloud& c) {
        std::vector<double> a;
        for (const Gaussian& g : c.gaussians) a.push_back(g.opacity());
        return opacity_entropy(a);
    };
    CHECK(value == doctest::Approx(entropy_of(cloud)).epsilon(1e-14));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        GaussianCloud p = cloud, m = cloud;
        p.gaussians[i].opacity_logit += 1e-6;
        m.gaussians[i].opacity_logit -= 1e-6;
        const double numeric = (entropy_of(p) - entropy_of(m)) / 2e-6;
        CHECK(grad[i] == doctest::Approx(numeric).epsilon(1e-6));
    }
    // Above one half the gradient pushes the logit up (towards opaque) under descent.
    Gaussian g;
    g.opacity_logit = 1.0;
    CHECK(opacity_entropy_grad_logits(GaussianCloud{{g}})[0] < 0.0);
}

TEST_CASE("Pearson correlation is invariant to positive affine maps") {
    const Image a = random_image(21, 16, 16, 1, 1.0, 50.0);
    const Image b = random_image(22, 16, 16, 1, 1.0, 50.0);
    const double r = pearson(a, b);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> scale(0.1, 10.0), shift(-100.0, 100.0);
    for (int k = 0; k < 20; ++k) {
        Image t = a;
        const double s = scale(rng), o = shift(rng);
        for (double& v : t.data) v = s * v + o;
        CHECK(std::abs(pearson(t, b) - r) <= 1e-6);
        Image neg = a;
        for (double& v : neg.data) v = -s * v + o;
        CHECK(std::abs(pearson(neg, b) + r) <= 1e-6);
    }
}

TEST_CASE("Pearson against a straightforward two-pass formula, with a mask") {
    const Image a = random_image(31, 10, 7, 1);
    const Image b = random_image(32, 10, 7, 1);
    Mask mask(a.pixel_count(), 0);
    for (std::size_t i = 0; i < mask.size(); i += 3) mask[i] = 1;
    double ma = 0, mb = 0, n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            ma += a.data[i];
            mb += b.data[i];
            ++n;
        }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            sab += (a.data[i] - ma) * (b.data[i] - mb);
            saa += (a.data[i] - ma) * (a.data[i] - ma);
            sbb += (b.data[i] - mb) * (b.data[i] - mb);
        }
    CHECK(pearson(a, b, &mask) == doctest::Approx(sab / std::sqrt(saa * sbb)).epsilon(1e-12));
}

TEST_CASE("depth loss vanishes for affinely related depth maps") {
    const Image d = random_image(41, 20, 20, 1, 100.0, 300.0);
    for (auto [a, b] : {std::pair{1.0, 0.0}, {0.5, 3.0}, {2.0, -40.0}, {1e-3, 7.0}}) {
        Image t = d;
        for (double& v : t.data) v = a * v + b;
        CHECK(std::abs(loss_depth(t, d, nullptr)) <= 1e-9);
    }
    Image flipped = d;
    for (double& v : flipped.data) v = -v;
    CHECK(loss_depth(flipped, d, nullptr) == doctest::Approx(2.0));
    CHECK(loss_depth(flipped, d, nullptr, DepthLossMode::one_minus_abs) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("depth loss is neutral when correlation is undefined") {
    const Image d = random_image(42, 6, 6, 1);
    const Image flat(6, 6, 1, 3.0);
    const ImageLoss l = loss_depth_with_grad(flat, d, nullptr);
    CHECK(l.value == 1.0);
    for (double g : l.grad.data) CHECK(g == 0.0);
    Mask one(36, 0);
    one[4] = 1;
    CHECK(loss_depth(d, d, &one) == 1.0);
    CHECK_THROWS_AS(pearson(d, d, &one), ContractError);
}

TEST_CASE("depth loss gradient matches central differences") {
    const Image a = random_image(51, 12, 9, 1, 10.0, 20.0);
    const Image b = random_image(52, 12, 9, 1, 10.0, 20.0);
    Mask mask(a.pixel_count(), 1);
    mask[0] = mask[5] = 0;
    for (DepthLossMode mode : {DepthLossMode::one_minus_pcorr, DepthLossMode::one_minus_abs}) {
        const ImageLoss l = loss_depth_with_grad(a, b, &mask, mode);
        CHECK(l.grad.data[0] == 0.0);
        check_image_gradient(a, l.grad, [&](const Image& p) { return loss_depth(p, b, &mask, mode); }, 40, 53);
    }
}

TEST_CASE("depth mask keeps pixels with accumulated alpha of at least one half") {
    Image alpha(3, 1, 1);
    alpha.data = {0.49, 0.5, 0.9};
    CHECK(depth_mask_from_alpha(alpha) == Mask{0, 1, 1});
}

TEST_CASE("objectives combine their terms with the configured weights") {
    const Image x = random_image(61, 12, 12, 3), y = random_image(62, 12, 12, 3);
    const std::vector<Image> renders{x}, targets{y};
    const std::vector<double> alphas{0.3, 0.9};
    LossWeights w;
    const double base = loss_color(x, y, w.lambda_dssim);
    const double ent = opacity_entropy(alphas);
    CHECK(loss_sat(renders, targets, alphas, {}, w) == doctest::Approx(base + 10.0 * ent).epsilon(1e-14));
    DepthPair pair{random_image(63, 12, 12, 1), random_image(64, 12, 12, 1), {}};
    const std::vector<DepthPair> pairs{pair};
    const double dl = loss_depth(pair.rendered, pair.estimated, nullptr);
    CHECK(loss_sat(renders, targets, alphas, pairs, w) ==
          doctest::Approx(base + 10.0 * ent + 0.5 * dl).epsilon(1e-14));
    CHECK(loss_idu(renders, targets, pairs, w) == doctest::Approx(base + 0.5 * dl).epsilon(1e-14));
    w.lambda_dssim = 1.5;
    CHECK_THROWS_AS(loss_sat(renders, targets, alphas, {}, w), ContractError);
}

TEST_CASE("shape mismatches are contract errors") {
    const Image a(4, 4, 3), b(4, 5, 3);
    CHECK_THROWS_AS(loss_color(a, b, 0.2), ContractError);
    CHECK_THROWS_AS(psnr(a, b), ContractError);
    CHECK_THROWS_AS(pearson(Image(4, 4, 3), Image(4, 4, 3)), ContractError);
    CHECK(psnr(a, a) == 99.0);
    CHECK(parse_depth_loss_mode("one_minus_abs") == DepthLossMode::one_minus_abs);
    CHECK_THROWS_AS(parse_depth_loss_mode("l2"), ContractError);
}
