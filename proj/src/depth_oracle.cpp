#include "skyfall/depth_oracle.hpp"

#include "skyfall/errors.hpp"
#include "skyfall/synth.hpp"

#include <cmath>
#include <random>

namespace skyfall {

MockAffineOracle::MockAffineOracle(GaussianCloud ground_truth, std::uint64_t seed) : truth_(std::move(ground_truth)) {
    std::mt19937_64 rng(seed);
    scale_ = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    offset_ = std::uniform_real_distribution<double>(-5.0, 5.0)(rng);
}

MockAffineOracle::MockAffineOracle(GaussianCloud ground_truth, double scale, double offset)
    : truth_(std::move(ground_truth)), scale_(scale), offset_(offset) {}

Image MockAffineOracle::estimate(const Image&, const CameraPinhole& camera) const {
    Image d = ground_truth_depth(truth_, camera);
    for (double& x : d.data) x = scale_ * x + offset_;
    return d;
}

Image ConstantDepthOracle::estimate(const Image& rgb, const CameraPinhole&) const {
    return Image(rgb.width, rgb.height, 1, value_);
}

Image estimate_depth(const DepthOracle& oracle, const Image& rgb, const CameraPinhole& camera) {
    Image d;
    try {
        d = oracle.estimate(rgb, camera);
    } catch (const OracleError&) {
        throw;
    } catch (const std::exception& e) {
        throw OracleError(oracle.name() + ": " + e.what());
    }
    if (d.width != rgb.width || d.height != rgb.height || d.channels != 1) {
        throw OracleError(oracle.name() + ": depth map shape does not match the input image");
    }
    for (double x : d.data) {
        if (!std::isfinite(x)) throw OracleError(oracle.name() + ": non-finite depth value");
    }
    return d;
}

} // namespace skyfall
