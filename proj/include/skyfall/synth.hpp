#pragma once

#include "skyfall/geometry.hpp"
#include "skyfall/image.hpp"
#include "skyfall/train.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace skyfall {

/// Procedural city block: a ground plane plus box buildings, every surface
/// covered by flat Gaussians. Views orbit the origin at high elevation.
struct SyntheticSceneSpec {
    std::uint64_t seed = 0;
    int num_gaussians = 200;
    double block_size = 80.0; // side of the square ground patch
    int num_buildings = 4;
    int num_views = 20;
    int num_heldout = 4;      // same elevation band, unseen azimuths
    int num_low_views = 8;    // oblique held-out views
    double elevation_min = 70.0;
    double elevation_max = 85.0;
    double low_elevation = 45.0;
    double radius = 300.0;
    double low_radius = 250.0;
    double fov_deg = 20.0;
    int resolution = 64;
    int dates = 1;
    double perturb = 0.0;     // brightness amplitude of the per-date change, e.g. 0.1
    double seed_jitter = 1.0; // std-dev of the seed point offsets

    void validate() const;
};

struct SyntheticScene {
    SyntheticSceneSpec spec;
    GaussianCloud ground_truth;
    GaussianCloud seed_cloud;
    Dataset train;   // satellite views, embedding_index = view index
    Dataset heldout; // unperturbed
    Dataset low;     // unperturbed oblique views
    std::vector<Image> train_depth; // ground-truth depth per view of each split
    std::vector<Image> heldout_depth;
    std::vector<Image> low_depth;
    std::vector<int> dates; // per training view
};

SyntheticScene synth_scene(const SyntheticSceneSpec& spec);

/// Camera-space depth of `cloud`: alpha-normalized where coverage reaches 0.5,
/// otherwise the depth of the ground plane z = 0 (the far plane if missed).
Image ground_truth_depth(const GaussianCloud& cloud, const CameraPinhole& cam);

/// Multiplicative brightness field of date `date`, one factor per pixel and channel in [1-A, 1+A].
Image date_perturbation(const SyntheticSceneSpec& spec, int date, int width, int height);

/// SHA-256 over all images, depths and cameras.
std::string dataset_hash(const SyntheticScene& scene);

/// Directory layout: scene.json, images/*.png, depth/*.pfm, ground_truth.ply, seed.ply.
void write_scene(const std::filesystem::path& dir, const SyntheticScene& scene);
SyntheticScene read_scene(const std::filesystem::path& dir);

} // namespace skyfall
