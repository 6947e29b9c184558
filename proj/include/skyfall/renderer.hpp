#pragma once

#include "skyfall/appearance.hpp"
#include "skyfall/geometry.hpp"
#include "skyfall/image.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace skyfall {

enum class RenderMode {
    deterministic, // single thread
    parallel,      // tiles spread over hardware threads; same compositing order
};

struct RenderOptions {
    RenderMode mode = RenderMode::deterministic;
    int max_dim = 4096;
    int tile_size = 16;
    int threads = 0; // 0 = hardware concurrency (parallel mode only)
};

/// Per-pixel opacity below this is skipped; above kAlphaClamp it is clamped.
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kAlphaClamp = 0.99;
/// Squared Mahalanobis radius beyond which a splat contributes exactly zero (3 sigma).
inline constexpr double kFootprintCutoff = 9.0;

struct RenderOutput {
    Image rgb;   // 3 channels
    Image depth; // alpha-blended camera-space depth
    Image alpha; // accumulated opacity
};

/// d(loss)/d(RenderOutput), same shapes as the output it differentiates.
struct RenderUpstream {
    Image d_rgb;
    Image d_depth;
    Image d_alpha;

    static RenderUpstream zeros(int width, int height);
};

struct RenderGradients {
    /// d(loss)/d(params), one tangent per Gaussian in cloud order.
    std::vector<Gaussian> d_gaussians;
    /// |d(loss)/d(mean2d)| in normalized device units; zero for culled Gaussians.
    std::vector<double> mean2d_grad_norm;
    /// Whether each Gaussian survived culling for this view.
    std::vector<char> visible;

    bool has_appearance = false;
    int embedding_index = -1;
    Eigen::VectorXd d_embedding;
    Eigen::VectorXd d_mlp_params;
};

/// Rasterizes one view and keeps what the backward pass needs. The cloud,
/// camera and appearance context must outlive the object.
class Rasterizer {
public:
    Rasterizer(const GaussianCloud& cloud, const CameraPinhole& cam,
               const AppearanceContext* appearance, RenderOptions options = {});
    ~Rasterizer();
    Rasterizer(Rasterizer&&) noexcept;
    Rasterizer& operator=(Rasterizer&&) noexcept;

    const RenderOutput& output() const;
    RenderGradients backward(const RenderUpstream& upstream) const;

    /// Indices (into the cloud) of Gaussians that survived culling, in compositing order.
    std::vector<int> sorted_visible() const;
    /// 3-sigma screen radius over the larger image side, per cloud index (0 when culled).
    std::vector<double> footprint_fraction() const;

private:
    struct State;
    std::unique_ptr<State> state_;
};

RenderOutput render(const GaussianCloud& cloud, const CameraPinhole& cam,
                    const std::optional<AppearanceContext>& appearance = std::nullopt,
                    const RenderOptions& options = {});

RenderGradients render_backward(const GaussianCloud& cloud, const CameraPinhole& cam,
                                const std::optional<AppearanceContext>& appearance,
                                const RenderUpstream& upstream, const RenderOptions& options = {});

} // namespace skyfall
