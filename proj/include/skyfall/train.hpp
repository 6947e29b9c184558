#pragma once

#include "skyfall/appearance.hpp"
#include "skyfall/densify.hpp"
#include "skyfall/depth_oracle.hpp"
#include "skyfall/geometry.hpp"
#include "skyfall/image.hpp"
#include "skyfall/losses.hpp"
#include "skyfall/optimizer.hpp"
#include "skyfall/renderer.hpp"
#include "skyfall/view_sampling.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string_view>
#include <vector>

namespace skyfall {

enum class Provenance { satellite, refined, pseudo };
std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);

/// One supervised view. `embedding_index` selects the per-image appearance
/// embedding; refined images carry -1 and are rendered with the fixed embedding.
struct TrainingImage {
    CameraPinhole camera;
    Image image;
    int embedding_index = -1;
    Provenance provenance = Provenance::satellite;
    int source_view = -1;   // refined: index of the rendered view it came from
    int sample_index = 0;   // refined: which of the N_s samples
};

using Dataset = std::vector<TrainingImage>;

struct SceneModel {
    GaussianCloud cloud;
    AppearanceModel appearance; // may be empty (0 images) when appearance modeling is off
};

struct TrainConfig {
    int total_iters = 30000;
    int densify_start = 1000;
    int densify_end = 21000;
    int densify_interval = 100;
    int opacity_reset_interval = 3000;
    // The entropy term drives every reset opacity (0.01) to zero, so resets are
    // skipped while it is active unless this is set.
    bool reset_opacity_with_entropy = false;
    DensifyConfig densify;
    LearningRates lr;
    AdamParams adam;
    LossWeights weights;
    DepthLossMode depth_mode = DepthLossMode::one_minus_pcorr;
    bool opacity_regularization = true;
    bool depth_supervision = true;
    bool use_appearance = true;
    PseudoCameraConfig pseudo;
    int oracle_concurrency = 4;
    RenderOptions render;
    int finite_check_interval = 500;
    std::uint64_t seed = 0;

    /// Reconstruction-stage defaults.
    static TrainConfig reconstruction();
    /// Dataset-update episode defaults: 10,000 iterations, densify through 9,000, no opacity term.
    static TrainConfig episode();
    void validate() const;
};

/// Loss terms of the most recent step. `has_opacity_term` / `has_depth_term`
/// record which terms were part of the objective.
struct StepStats {
    int iter = 0;
    double loss_color = 0.0;
    double loss_op = 0.0;
    double loss_depth = 0.0;
    bool has_opacity_term = false;
    bool has_depth_term = false;
    std::size_t num_gaussians = 0;
    Provenance source = Provenance::satellite;
};

/// Draws training targets from a refined pool with probability `refined_fraction`
/// and from the satellite pool otherwise. Within a pool, images are visited in
/// seeded per-epoch permutations.
class MixedSampler {
public:
    MixedSampler(std::size_t refined, std::size_t satellite, double refined_fraction, std::uint64_t seed);

    struct Draw {
        Provenance pool;
        std::size_t index;
    };
    Draw next();

private:
    std::size_t take(std::vector<std::size_t>& perm, std::size_t& cursor, std::size_t n);

    std::size_t refined_n_, satellite_n_;
    double fraction_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> refined_perm_, satellite_perm_;
    std::size_t refined_cursor_ = 0, satellite_cursor_ = 0;
};

/// Radius of the bounding sphere of camera centres and their ground-plane targets.
double scene_extent(const Dataset& views);

/// Single-writer optimization loop over a SceneModel.
class Trainer {
public:
    Trainer(SceneModel& model, const TrainConfig& config, const DepthOracle* oracle, double extent);

    /// Runs config.total_iters reconstruction steps on satellite images.
    void reconstruct(const Dataset& satellite);
    /// Runs one dataset-update episode mixing refined and satellite targets.
    void episode(const Dataset& refined, const Dataset& satellite, const Eigen::VectorXd& fixed_embedding,
                 double refined_fraction = 0.75);

    /// CSV progress sink: "iter,loss_color,loss_op,loss_depth,num_gaussians".
    void set_log(std::ostream* csv) { csv_ = csv; }
    /// Called after every step.
    void set_step_callback(std::function<void(const StepStats&)> cb) { callback_ = std::move(cb); }

    const SceneOptimizer& optimizer() const { return optimizer_; }
    const StepStats& last_step() const { return last_; }
    std::size_t depth_steps_skipped() const { return depth_skipped_; }

private:
    struct Target {
        const TrainingImage* view;
        const AppearanceContext* appearance;
    };

    void step(int iter, const Target& target, const std::vector<AppearanceContext>& contexts);
    void add_depth_term(int iter, SceneGradients& grads, StepStats& stats);
    void check_finite(int iter) const;

    SceneModel& model_;
    TrainConfig config_;
    const DepthOracle* oracle_;
    double extent_;
    std::mt19937_64 rng_;
    SceneOptimizer optimizer_;
    DensifyStats densify_stats_;
    std::ostream* csv_ = nullptr;
    std::function<void(const StepStats&)> callback_;
    StepStats last_;
    std::size_t depth_skipped_ = 0;
};

/// Reconstruction stage: returns the trained model. `init.appearance` is
/// created for `satellite.size()` images when empty and appearance is enabled.
SceneModel reconstruct_stage(SceneModel init, const Dataset& satellite, const TrainConfig& config,
                             const DepthOracle* oracle = nullptr, std::ostream* csv = nullptr);

/// One dataset-update episode with the given fixed appearance embedding.
SceneModel train_episode(SceneModel model, const Dataset& refined, const Dataset& satellite,
                         const TrainConfig& config, const Eigen::VectorXd& fixed_embedding,
                         const DepthOracle* oracle = nullptr, double refined_fraction = 0.75,
                         std::ostream* csv = nullptr);

} // namespace skyfall
