#pragma once

#include "skyfall/geometry.hpp"
#include "skyfall/idu.hpp"
#include "skyfall/synth.hpp"
#include "skyfall/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>

namespace skyfall {

nlohmann::json camera_to_json(const CameraPinhole& cam);
CameraPinhole camera_from_json(const nlohmann::json& j);

/// Missing keys keep the value from `base`; unknown keys are rejected.
nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

nlohmann::json synth_spec_to_json(const SyntheticSceneSpec& s);
SyntheticSceneSpec synth_spec_from_json(const nlohmann::json& j, SyntheticSceneSpec base = {});

nlohmann::json idu_plan_to_json(const IduPlan& p);
IduPlan idu_plan_from_json(const nlohmann::json& j, IduPlan base);

/// Reads a JSON file; ParseError carries the byte offset of a syntax error.
nlohmann::json load_json_file(const std::filesystem::path& path);

/// Value of SKYFALL_SEED, if set. A malformed value is a ContractError.
std::optional<std::uint64_t> seed_from_env();

} // namespace skyfall
