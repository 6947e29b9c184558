#pragma once

#include "skyfall/geometry.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>

namespace skyfall {

/// Affine colour transform c~ = gamma * c^ + beta.
struct AffineColor {
    Vec3 gamma = Vec3::Ones();
    Vec3 beta = Vec3::Zero();
};

/// Elementwise gamma * c_hat + beta, clamped to be non-negative.
Vec3 apply_appearance(const Vec3& c_hat, const Vec3& gamma, const Vec3& beta);

/// Per-image embeddings plus the MLP f(e_j, g_i, c_bar_i) -> (gamma, beta).
///
/// The MLP is input(32 + 24 + 3) -> 128 -> 128 -> 6 with ReLU hidden layers.
/// Output rows 0..2 are the gain offset (gamma = 1 + out) and rows 3..5 are
/// beta. The last layer starts at zero so a fresh model is the identity.
class AppearanceModel {
public:
    static constexpr int kInputDim = kImageEmbeddingDim + kAppearanceCodeDim + 3;
    static constexpr int kHiddenDim = 128;
    static constexpr int kOutputDim = 6;
    static constexpr std::size_t kMlpParamCount =
        std::size_t(kHiddenDim) * kInputDim + kHiddenDim + std::size_t(kHiddenDim) * kHiddenDim +
        kHiddenDim + std::size_t(kOutputDim) * kHiddenDim + kOutputDim;

    AppearanceModel() = default;
    /// He-uniform hidden layers, zero output layer, embeddings ~ N(0, 0.1^2).
    AppearanceModel(int num_images, std::uint64_t seed);

    int num_images() const { return static_cast<int>(embeddings.rows()); }
    Eigen::VectorXd embedding(int image) const;

    /// Single evaluation; throws ContractError on wrong input sizes.
    AffineColor params(std::span<const double> image_embedding, std::span<const double> gaussian_code,
                       const Vec3& dc_color) const;

    using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;
    using ConstMatrixMap =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;

    struct Layers {
        ConstMatrixMap w1, b1, w2, b2, w3, b3;
    };
    struct MutableLayers {
        MatrixMap w1, b1, w2, b2, w3, b3;
    };
    Layers layers() const;
    static MutableLayers layers_of(Eigen::VectorXd& flat);

    /// Rows are images, columns the 32 embedding entries.
    Eigen::MatrixXd embeddings;
    /// All MLP weights and biases, flattened (w1, b1, w2, b2, w3, b3; column-major).
    Eigen::VectorXd mlp_params;
};

/// Selects which embedding a render uses. `embedding` is copied so a fixed
/// IDU embedding does not need to live in the model.
struct AppearanceContext {
    const AppearanceModel* model = nullptr;
    Eigen::VectorXd embedding;
    int image_index = -1; // -1 when the embedding is not a trainable row

    static AppearanceContext for_image(const AppearanceModel& model, int image);
    static AppearanceContext fixed(const AppearanceModel& model, Eigen::VectorXd embedding);
};

/// Activations kept from a batched forward pass (one column per Gaussian).
struct AppearanceBatch {
    Eigen::MatrixXd input;   // kInputDim x n
    Eigen::MatrixXd hidden1; // post-ReLU
    Eigen::MatrixXd hidden2; // post-ReLU
    Eigen::MatrixXd output;  // kOutputDim x n
};

AppearanceBatch appearance_forward(const AppearanceModel& model, const Eigen::VectorXd& embedding,
                                   const Eigen::MatrixXd& codes, const Eigen::MatrixXd& dc_colors);

struct AppearanceBackward {
    Eigen::VectorXd d_embedding;  // 32
    Eigen::MatrixXd d_codes;      // 24 x n
    Eigen::MatrixXd d_dc_colors;  // 3 x n
    Eigen::VectorXd d_mlp_params; // kMlpParamCount
};

/// Backward through the MLP given d(loss)/d(output) (kOutputDim x n).
AppearanceBackward appearance_backward(const AppearanceModel& model, const AppearanceBatch& batch,
                                       const Eigen::MatrixXd& d_output);

} // namespace skyfall
