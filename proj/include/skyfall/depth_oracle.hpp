#pragma once

#include "skyfall/geometry.hpp"
#include "skyfall/image.hpp"

#include <cstdint>
#include <memory>
#include <string>

namespace skyfall {

/// Monocular depth estimator: RGB render -> depth map defined up to an affine
/// transform. The camera is passed for oracles that synthesize their answer
/// (mocks); image-only estimators ignore it. Implementations must be thread-safe.
class DepthOracle {
public:
    virtual ~DepthOracle() = default;
    virtual Image estimate(const Image& rgb, const CameraPinhole& camera) const = 0;
    virtual std::string name() const = 0;
    /// False for oracles that never look at the pixels; callers may then skip colour work.
    virtual bool uses_image() const { return true; }
};

/// Returns a * D_true + b, where D_true is the ground-truth depth of a
/// reference cloud seen from the query camera. a > 0 and b are drawn from the seed.
class MockAffineOracle final : public DepthOracle {
public:
    MockAffineOracle(GaussianCloud ground_truth, std::uint64_t seed);
    MockAffineOracle(GaussianCloud ground_truth, double scale, double offset);

    Image estimate(const Image& rgb, const CameraPinhole& camera) const override;
    std::string name() const override { return "mock-affine"; }
    bool uses_image() const override { return false; }

    double scale() const { return scale_; }
    double offset() const { return offset_; }

private:
    GaussianCloud truth_;
    double scale_;
    double offset_;
};

/// Constant depth everywhere (degenerate correlation).
class ConstantDepthOracle final : public DepthOracle {
public:
    explicit ConstantDepthOracle(double value = 1.0) : value_(value) {}
    Image estimate(const Image& rgb, const CameraPinhole& camera) const override;
    std::string name() const override { return "constant"; }

private:
    double value_;
};

/// Runs the oracle and checks its contract: same resolution, single channel,
/// finite values. Any violation or backend exception becomes OracleError.
Image estimate_depth(const DepthOracle& oracle, const Image& rgb, const CameraPinhole& camera);

} // namespace skyfall
