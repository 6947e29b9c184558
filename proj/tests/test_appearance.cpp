#include "skyfall/appearance.hpp"
#include "skyfall/errors.hpp"

#include <doctest.h>

#include <random>
#include <vector>

using namespace skyfall;

namespace {

// Loop-by-loop evaluation of the three-layer MLP from the flat parameter vector.
std::vector<double> naive_mlp(const Eigen::VectorXd& p, const std::vector<double>& in) {
    const int ni = AppearanceModel::kInputDim, nh = AppearanceModel::kHiddenDim, no = AppearanceModel::kOutputDim;
    std::size_t off = 0;
    auto dense = [&](const std::vector<double>& x, int rows, int cols, bool relu) {
        std::vector<double> y(rows, 0.0);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) y[r] += p[off + std::size_t(c) * rows + r] * x[c]; // column-major
        off += std::size_t(rows) * cols;
        for (int r = 0; r < rows; ++r) {
            y[r] += p[off + r];
            if (relu) y[r] = std::max(0.0, y[r]);
        }
        off += rows;
        return y;
    };
    const auto h1 = dense(in, nh, ni, true);
    const auto h2 = dense(h1, nh, nh, true);
    return dense(h2, no, nh, false);
}

AppearanceModel perturbed_model(std::uint64_t seed) {
    AppearanceModel m(3, seed);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> n(0.0, 0.05);
    auto L = AppearanceModel::layers_of(m.mlp_params);
    for (Eigen::Index i = 0; i < L.w3.size(); ++i) L.w3.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < L.b3.size(); ++i) L.b3.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < L.b1.size(); ++i) L.b1.data()[i] = n(rng);
    return m;
}

} // namespace

TEST_CASE("a fresh model is the identity transform") {
    AppearanceModel m(5, 1);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    for (int k = 0; k < 10; ++k) {
        std::vector<double> code(kAppearanceCodeDim);
        for (double& c : code) c = n(rng);
        const auto e = m.embedding(k % 5);
        const AffineColor a = m.params({e.data(), 32}, code, Vec3(n(rng), n(rng), n(rng)));
        CHECK(a.gamma == Vec3::Ones());
        CHECK(a.beta == Vec3::Zero());
    }
}

TEST_CASE("MLP output matches a loop-by-loop evaluation") {
    const AppearanceModel m = perturbed_model(7);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    for (int k = 0; k < 5; ++k) {
        std::vector<double> code(kAppearanceCodeDim);
        for (double& c : code) c = n(rng);
        const Vec3 dc(n(rng), n(rng), n(rng));
        const auto e = m.embedding(k % 3);
        std::vector<double> in(e.data(), e.data() + 32);
        in.insert(in.end(), code.begin(), code.end());
        in.insert(in.end(), dc.data(), dc.data() + 3);
        const auto ref = naive_mlp(m.mlp_params, in);
        const AffineColor a = m.params({e.data(), 32}, code, dc);
        for (int c = 0; c < 3; ++c) {
            CHECK(a.gamma[c] == doctest::Approx(1.0 + ref[c]).epsilon(1e-12));
            CHECK(a.beta[c] == doctest::Approx(ref[3 + c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("MLP backward matches central differences") {
    AppearanceModel m = perturbed_model(11);
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n;
    const int count = 4;
    Eigen::VectorXd e = m.embedding(1);
    Eigen::MatrixXd codes(kAppearanceCodeDim, count), dc(3, count), up(AppearanceModel::kOutputDim, count);
    for (Eigen::Index i = 0; i < codes.size(); ++i) codes.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < dc.size(); ++i) dc.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = n(rng);
    auto objective = [&](const AppearanceModel& model, const Eigen::VectorXd& emb, const Eigen::MatrixXd& cd,
                         const Eigen::MatrixXd& col) {
        return appearance_forward(model, emb, cd, col).output.cwiseProduct(up).sum();
    };
    const AppearanceBackward b = appearance_backward(m, appearance_forward(m, e, codes, dc), up);
    const double h = 1e-6;
    auto agree = [](double a, double num) {
        return std::abs(a - num) <= 1e-6 * std::max(std::abs(a), std::abs(num)) + 1e-8;
    };
    for (int j = 0; j < kImageEmbeddingDim; j += 5) {
        Eigen::VectorXd p = e, q = e;
        p[j] += h;
        q[j] -= h;
        CHECK(agree(b.d_embedding[j], (objective(m, p, codes, dc) - objective(m, q, codes, dc)) / (2 * h)));
    }
    for (int j = 0; j < kAppearanceCodeDim; j += 7) {
        Eigen::MatrixXd p = codes, q = codes;
        p(j, 2) += h;
        q(j, 2) -= h;
        CHECK(agree(b.d_codes(j, 2), (objective(m, e, p, dc) - objective(m, e, q, dc)) / (2 * h)));
    }
    for (int j = 0; j < 3; ++j) {
        Eigen::MatrixXd p = dc, q = dc;
        p(j, 0) += h;
        q(j, 0) -= h;
        CHECK(agree(b.d_dc_colors(j, 0), (objective(m, e, codes, p) - objective(m, e, codes, q)) / (2 * h)));
    }
    std::uniform_int_distribution<Eigen::Index> pick(0, m.mlp_params.size() - 1);
    for (int k = 0; k < 30; ++k) {
        const Eigen::Index j = pick(rng);
        AppearanceModel p = m, q = m;
        p.mlp_params[j] += h;
        q.mlp_params[j] -= h;
        CHECK(agree(b.d_mlp_params[j], (objective(p, e, codes, dc) - objective(q, e, codes, dc)) / (2 * h)));
    }
}

TEST_CASE("embeddings start near N(0, 0.1^2)") {
    AppearanceModel m(200, 3);
    const double mean = m.embeddings.mean();
    const double sd = std::sqrt((m.embeddings.array() - mean).square().mean());
    CHECK(std::abs(mean) < 0.01);
    CHECK(sd == doctest::Approx(0.1).epsilon(0.05));
    CHECK(m.mlp_params.size() == static_cast<Eigen::Index>(AppearanceModel::kMlpParamCount));
    CHECK(AppearanceModel::kInputDim == 59);
}

TEST_CASE("affine colour is clamped at zero") {
    const Vec3 out = apply_appearance(Vec3(0.5, 0.2, 0.1), Vec3(2.0, 1.0, 1.0), Vec3(0.0, -0.5, 0.05));
    CHECK(out.isApprox(Vec3(1.0, 0.0, 0.15)));
}

TEST_CASE("contract violations") {
    AppearanceModel m(2, 1);
    std::vector<double> short_code(10), code(kAppearanceCodeDim), emb(kImageEmbeddingDim);
    CHECK_THROWS_AS(m.params(emb, short_code, Vec3::Zero()), ContractError);
    CHECK_THROWS_AS(m.embedding(2), ContractError);
    CHECK_THROWS_AS(AppearanceContext::fixed(m, Eigen::VectorXd::Zero(5)), ContractError);
    AppearanceModel empty;
    CHECK_THROWS_AS(empty.params(emb, code, Vec3::Zero()), ContractError);
}
