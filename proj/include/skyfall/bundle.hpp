#pragma once

#include "skyfall/geometry.hpp"
#include "skyfall/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace skyfall {

inline constexpr std::uint32_t kBundleVersion = 1;

struct ManifestEntry {
    std::string image; // path relative to the bundle file
    int camera = -1;   // index into SceneBundle::cameras
    int embedding_index = -1;
    Provenance provenance = Provenance::satellite;

    bool operator==(const ManifestEntry&) const = default;
};

/// Everything needed to resume or render a trained scene.
struct SceneBundle {
    SceneModel model;
    std::vector<CameraPinhole> cameras;
    std::vector<ManifestEntry> manifest;
    nlohmann::json config = nlohmann::json::object(); // TrainConfig and/or IDU plan
    std::uint64_t seed = 0;
    std::uint32_t version = kBundleVersion;
};

/// Layout: "SKYFALLB", u32 version, u64 header length, JSON header, raw
/// little-endian float64 payload (Gaussians, embeddings, MLP), SHA-256 of all
/// preceding bytes. Saving and loading are lossless.
std::vector<std::uint8_t> encode_bundle(const SceneBundle& b);
/// Throws ChecksumError, VersionError (newer than this build) or ParseError.
SceneBundle decode_bundle(std::span<const std::uint8_t> bytes);

void save_bundle(const std::filesystem::path& path, const SceneBundle& b);
/// When `check_manifest` is set, every manifest image must exist next to the bundle (IoError otherwise).
SceneBundle load_bundle(const std::filesystem::path& path, bool check_manifest = true);

} // namespace skyfall
