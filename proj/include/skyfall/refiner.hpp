#pragma once

#include "skyfall/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace skyfall {

inline constexpr std::string_view kDefaultSourcePrompt =
    "Satellite image of an urban area with modern and older buildings, roads, green spaces. "
    "Some areas appear distorted, with blurring and warping artifacts.";
inline constexpr std::string_view kDefaultTargetPrompt =
    "Clear satellite image of an urban area with sharp buildings, smooth edges, natural lighting, "
    "and well-defined textures.";

struct RefinerRequest {
    Image image; // RGB in [0,1]; sent as 8-bit PNG
    std::string source_prompt{kDefaultSourcePrompt};
    std::string target_prompt{kDefaultTargetPrompt};
    int n_min = 4;
    int n_max = 10;
    int num_samples = 2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct RefinerResponse {
    std::vector<Image> images;
    std::string backend;
    std::uint64_t seed = 0;
};

/// Wire encoding of the refine exchange. Images travel as base64 PNG.
nlohmann::json request_to_json(const RefinerRequest& req);
RefinerRequest request_from_json(const nlohmann::json& j);
nlohmann::json response_to_json(const RefinerResponse& resp);
RefinerResponse response_from_json(const nlohmann::json& j);

/// Throws OracleError unless the response has num_samples images of the request's size.
void check_response(const RefinerRequest& req, const RefinerResponse& resp);

/// Image-to-image editing backend. Implementations must be thread-safe.
class Refiner {
public:
    virtual ~Refiner() = default;
    virtual RefinerResponse refine(const RefinerRequest& req) const = 0;
    virtual std::string name() const = 0;
};

/// Returns the 8-bit quantized input num_samples times.
class IdentityRefiner final : public Refiner {
public:
    RefinerResponse refine(const RefinerRequest& req) const override;
    std::string name() const override { return "mock:identity"; }
};

/// Gaussian blur of the given standard deviation (pixels).
class BlurRefiner final : public Refiner {
public:
    explicit BlurRefiner(double sigma = 1.0);
    RefinerResponse refine(const RefinerRequest& req) const override;
    std::string name() const override { return "mock:blur"; }

private:
    double sigma_;
};

/// Adds N(0, sigma^2) noise; sample k uses a stream derived from (request seed, k).
class NoiseRefiner final : public Refiner {
public:
    explicit NoiseRefiner(double sigma = 0.02);
    RefinerResponse refine(const RefinerRequest& req) const override;
    std::string name() const override { return "mock:noise"; }

private:
    double sigma_;
};

/// Client for POST /refine and GET /health. Transport errors and non-200
/// replies become OracleError; retrying is left to the caller.
class HttpRefiner final : public Refiner {
public:
    explicit HttpRefiner(std::string base_url, double timeout_s = 600.0);
    RefinerResponse refine(const RefinerRequest& req) const override;
    std::string name() const override { return base_url_; }

    /// Body of GET /health.
    nlohmann::json health() const;

private:
    std::string base_url_;
    double timeout_s_;
};

/// "mock:identity", "mock:noise[:sigma]", "mock:blur[:sigma]" or "http://host:port".
std::unique_ptr<Refiner> make_refiner(std::string_view spec);

} // namespace skyfall
