#include "skyfall/appearance.hpp"

#include "skyfall/errors.hpp"

#include <cmath>
#include <random>

namespace skyfall {

namespace {

constexpr int kIn = AppearanceModel::kInputDim;
constexpr int kHid = AppearanceModel::kHiddenDim;
constexpr int kOut = AppearanceModel::kOutputDim;

constexpr std::size_t kW1 = 0;
constexpr std::size_t kB1 = kW1 + std::size_t(kHid) * kIn;
constexpr std::size_t kW2 = kB1 + kHid;
constexpr std::size_t kB2 = kW2 + std::size_t(kHid) * kHid;
constexpr std::size_t kW3 = kB2 + kHid;
constexpr std::size_t kB3 = kW3 + std::size_t(kOut) * kHid;
static_assert(kB3 + kOut == AppearanceModel::kMlpParamCount);

} // namespace

Vec3 apply_appearance(const Vec3& c_hat, const Vec3& gamma, const Vec3& beta) {
    return (gamma.cwiseProduct(c_hat) + beta).cwiseMax(0.0);
}

AppearanceModel::AppearanceModel(int num_images, std::uint64_t seed)
    : embeddings(num_images, kImageEmbeddingDim), mlp_params(Eigen::VectorXd::Zero(kMlpParamCount)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    for (Eigen::Index i = 0; i < embeddings.size(); ++i) {
        embeddings.data()[i] = normal(rng);
    }
    auto he_uniform = [&](std::size_t offset, std::size_t count, int fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < count; ++i) {
            mlp_params[static_cast<Eigen::Index>(offset + i)] = u(rng);
        }
    };
    he_uniform(kW1, std::size_t(kHid) * kIn, kIn);
    he_uniform(kW2, std::size_t(kHid) * kHid, kHid);
}

Eigen::VectorXd AppearanceModel::embedding(int image) const {
    if (image < 0 || image >= num_images()) {
        throw ContractError("appearance embedding index out of range");
    }
    return embeddings.row(image).transpose();
}

AppearanceModel::Layers AppearanceModel::layers() const {
    const double* p = mlp_params.data();
    return {ConstMatrixMap(p + kW1, kHid, kIn), ConstMatrixMap(p + kB1, kHid, 1),
            ConstMatrixMap(p + kW2, kHid, kHid), ConstMatrixMap(p + kB2, kHid, 1),
            ConstMatrixMap(p + kW3, kOut, kHid), ConstMatrixMap(p + kB3, kOut, 1)};
}

AppearanceModel::MutableLayers AppearanceModel::layers_of(Eigen::VectorXd& flat) {
    double* p = flat.data();
    return {MatrixMap(p + kW1, kHid, kIn), MatrixMap(p + kB1, kHid, 1),
            MatrixMap(p + kW2, kHid, kHid), MatrixMap(p + kB2, kHid, 1),
            MatrixMap(p + kW3, kOut, kHid), MatrixMap(p + kB3, kOut, 1)};
}

AffineColor AppearanceModel::params(std::span<const double> image_embedding,
                                    std::span<const double> gaussian_code, const Vec3& dc_color) const {
    if (image_embedding.size() != kImageEmbeddingDim || gaussian_code.size() != kAppearanceCodeDim) {
        throw ContractError("appearance_params: expected a 32-d image embedding and a 24-d code");
    }
    if (mlp_params.size() != static_cast<Eigen::Index>(kMlpParamCount)) {
        throw ContractError("appearance_params: model is not initialized");
    }
    const Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(image_embedding.data(), kImageEmbeddingDim);
    const Eigen::MatrixXd g = Eigen::Map<const Eigen::MatrixXd>(gaussian_code.data(), kAppearanceCodeDim, 1);
    const AppearanceBatch b = appearance_forward(*this, e, g, dc_color);
    AffineColor out;
    out.gamma = Vec3::Ones() + b.output.col(0).head<3>();
    out.beta = b.output.col(0).tail<3>();
    return out;
}

AppearanceContext AppearanceContext::for_image(const AppearanceModel& model, int image) {
    return {&model, model.embedding(image), image};
}

AppearanceContext AppearanceContext::fixed(const AppearanceModel& model, Eigen::VectorXd embedding) {
    if (embedding.size() != kImageEmbeddingDim) {
        throw ContractError("fixed appearance embedding must be 32-dimensional");
    }
    return {&model, std::move(embedding), -1};
}

AppearanceBatch appearance_forward(const AppearanceModel& model, const Eigen::VectorXd& embedding,
                                   const Eigen::MatrixXd& codes, const Eigen::MatrixXd& dc_colors) {
    const Eigen::Index n = codes.cols();
    const auto L = model.layers();
    AppearanceBatch b;
    b.input.resize(kIn, n);
    b.input.topRows(kImageEmbeddingDim) = embedding.replicate(1, n);
    b.input.middleRows(kImageEmbeddingDim, kAppearanceCodeDim) = codes;
    b.input.bottomRows(3) = dc_colors;
    b.hidden1.noalias() = L.w1 * b.input;
    b.hidden1 = (b.hidden1.colwise() + L.b1.col(0)).cwiseMax(0.0);
    b.hidden2.noalias() = L.w2 * b.hidden1;
    b.hidden2 = (b.hidden2.colwise() + L.b2.col(0)).cwiseMax(0.0);
    b.output.noalias() = L.w3 * b.hidden2;
    b.output.colwise() += L.b3.col(0);
    return b;
}

AppearanceBackward appearance_backward(const AppearanceModel& model, const AppearanceBatch& batch,
                                       const Eigen::MatrixXd& d_output) {
    const auto L = model.layers();
    AppearanceBackward r;
    r.d_mlp_params = Eigen::VectorXd::Zero(AppearanceModel::kMlpParamCount);
    auto dL = AppearanceModel::layers_of(r.d_mlp_params);

    dL.w3.noalias() = d_output * batch.hidden2.transpose();
    dL.b3 = d_output.rowwise().sum();
    Eigen::MatrixXd d_h2 = L.w3.transpose() * d_output;
    d_h2 = d_h2.cwiseProduct((batch.hidden2.array() > 0.0).cast<double>().matrix());
    dL.w2.noalias() = d_h2 * batch.hidden1.transpose();
    dL.b2 = d_h2.rowwise().sum();
    Eigen::MatrixXd d_h1 = L.w2.transpose() * d_h2;
    d_h1 = d_h1.cwiseProduct((batch.hidden1.array() > 0.0).cast<double>().matrix());
    dL.w1.noalias() = d_h1 * batch.input.transpose();
    dL.b1 = d_h1.rowwise().sum();
    const Eigen::MatrixXd d_in = L.w1.transpose() * d_h1;

    r.d_embedding = d_in.topRows(kImageEmbeddingDim).rowwise().sum();
    r.d_codes = d_in.middleRows(kImageEmbeddingDim, kAppearanceCodeDim);
    r.d_dc_colors = d_in.bottomRows(3);
    return r;
}

} // namespace skyfall
