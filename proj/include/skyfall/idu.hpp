#pragma once

#include "skyfall/depth_oracle.hpp"
#include "skyfall/refiner.hpp"
#include "skyfall/train.hpp"
#include "skyfall/view_sampling.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace skyfall {

struct RefinerParams {
    std::string source_prompt{kDefaultSourcePrompt};
    std::string target_prompt{kDefaultTargetPrompt};
    int n_min = 4;
    int n_max = 10;
};

struct IduPlan {
    int episodes = 5;         // N_e
    int views_per_point = 6;  // N_v
    int samples_per_view = 2; // N_s
    LookatGrid grid;
    CurriculumSchedule schedule;
    RefinerParams refiner;
    TrainConfig episode_config = TrainConfig::episode();
    ViewIntrinsics intrinsics{20.0, 2048};
    int refine_concurrency = 4;
    int refine_retries = 3;
    double refined_fraction = 0.75;
    std::uint64_t seed = 0;

    void validate() const;
    /// "dfc2019" or "googleearth" view layout with the default episode settings.
    static IduPlan preset(std::string_view name);
};

/// N_s refined samples for every render, ordered by (view, sample) whatever
/// order the requests complete in. A failing request is retried up to
/// plan.refine_retries times; then OracleError reports how many views finished.
Dataset refine_views(const std::vector<Image>& renders, const std::vector<CameraPinhole>& cameras,
                     const IduPlan& plan, const Refiner& refiner, int episode = 0);

struct EpisodeRecord {
    int episode = 0;
    double elevation_deg = 0.0;
    double radius = 0.0;
    std::vector<CameraPinhole> cameras;
    std::size_t refined_images = 0;
    std::size_t gaussians = 0;
};

struct IduResult {
    SceneModel model;
    std::vector<EpisodeRecord> episodes; // completed episodes only
    bool completed = true;
    bool backend_failure = false; // the failure came from the refiner or depth oracle
    std::string diagnostics;
    Eigen::VectorXd fixed_embedding;
    int fixed_embedding_index = -1;
};

/// Render -> refine -> retrain for each scheduled episode. On failure the
/// model from the last completed episode is returned with completed = false.
IduResult idu_run(SceneModel model, const IduPlan& plan, const Dataset& satellite, const Refiner& refiner,
                  const DepthOracle* oracle = nullptr, std::ostream* csv = nullptr);

} // namespace skyfall
