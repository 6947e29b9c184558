#include "skyfall/refiner.hpp"

#include "skyfall/errors.hpp"

#include <httplib.h>

#include <cmath>
#include <random>

namespace skyfall {

using nlohmann::json;

void RefinerRequest::validate() const {
    if (image.channels != 3 || image.width <= 0 || image.height <= 0) {
        throw ContractError("refiner request needs a non-empty RGB image");
    }
    if (source_prompt.empty() || target_prompt.empty()) throw ContractError("refiner prompts must be non-empty");
    if (num_samples < 1) throw ContractError("num_samples must be at least 1");
    if (n_min < 0 || n_max < n_min) throw ContractError("refiner step range must satisfy 0 <= n_min <= n_max");
}

namespace {

std::string image_to_b64(const Image& img) { return base64_encode(encode_png(img)); }

Image image_from_b64(const std::string& s) {
    const auto bytes = base64_decode(s);
    return decode_png(bytes);
}

Image as_rgb(Image img) {
    if (img.channels == 3) return img;
    if (img.channels == 4 || img.channels == 1 || img.channels == 2) {
        Image out(img.width, img.height, 3);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y, img.channels >= 3 ? c : 0);
        return out;
    }
    throw OracleError("refiner returned an image with " + std::to_string(img.channels) + " channels");
}

} // namespace

json request_to_json(const RefinerRequest& req) {
    return json{{"image", image_to_b64(req.image)},
                {"source_prompt", req.source_prompt},
                {"target_prompt", req.target_prompt},
                {"n_min", req.n_min},
                {"n_max", req.n_max},
                {"num_samples", req.num_samples},
                {"seed", req.seed}};
}

RefinerRequest request_from_json(const json& j) {
    RefinerRequest r;
    r.image = as_rgb(image_from_b64(j.at("image").get<std::string>()));
    r.source_prompt = j.value("source_prompt", std::string(kDefaultSourcePrompt));
    r.target_prompt = j.value("target_prompt", std::string(kDefaultTargetPrompt));
    r.n_min = j.value("n_min", 4);
    r.n_max = j.value("n_max", 10);
    r.num_samples = j.value("num_samples", 1);
    r.seed = j.value("seed", std::uint64_t{0});
    return r;
}

json response_to_json(const RefinerResponse& resp) {
    json images = json::array();
    for (const Image& img : resp.images) images.push_back(image_to_b64(img));
    return json{{"images", images}, {"backend", resp.backend}, {"seed", resp.seed}};
}

RefinerResponse response_from_json(const json& j) {
    RefinerResponse r;
    for (const auto& s : j.at("images")) r.images.push_back(as_rgb(image_from_b64(s.get<std::string>())));
    r.backend = j.value("backend", std::string("unknown"));
    r.seed = j.value("seed", std::uint64_t{0});
    return r;
}

void check_response(const RefinerRequest& req, const RefinerResponse& resp) {
    if (static_cast<int>(resp.images.size()) != req.num_samples) {
        throw OracleError("refiner returned " + std::to_string(resp.images.size()) + " images, expected " +
                          std::to_string(req.num_samples));
    }
    for (const Image& img : resp.images) {
        if (img.width != req.image.width || img.height != req.image.height) {
            throw OracleError("refiner changed the image size");
        }
    }
}

RefinerResponse IdentityRefiner::refine(const RefinerRequest& req) const {
    req.validate();
    RefinerResponse r;
    r.backend = name();
    r.seed = req.seed;
    r.images.assign(req.num_samples, quantize_8bit(req.image));
    return r;
}

BlurRefiner::BlurRefiner(double sigma) : sigma_(sigma) {
    if (!(sigma > 0.0)) throw ContractError("blur sigma must be positive");
}

RefinerResponse BlurRefiner::refine(const RefinerRequest& req) const {
    req.validate();
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma_ * sigma_));
    for (double& w : k) w /= sum;

    const Image& in = req.image;
    Image tmp(in.width, in.height, 3), out(in.width, in.height, 3);
    // Clamp-to-edge borders keep flat regions flat.
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in.at(std::clamp(x + i, 0, in.width - 1), y, c);
                tmp.at(x, y, c) = acc;
            }
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(x, std::clamp(y + i, 0, in.height - 1), c);
                out.at(x, y, c) = acc;
            }
    RefinerResponse r;
    r.backend = name();
    r.seed = req.seed;
    r.images.assign(req.num_samples, quantize_8bit(out));
    return r;
}

NoiseRefiner::NoiseRefiner(double sigma) : sigma_(sigma) {
    if (!(sigma >= 0.0)) throw ContractError("noise sigma must be non-negative");
}

RefinerResponse NoiseRefiner::refine(const RefinerRequest& req) const {
    req.validate();
    RefinerResponse r;
    r.backend = name();
    r.seed = req.seed;
    for (int s = 0; s < req.num_samples; ++s) {
        std::seed_seq seq{static_cast<std::uint32_t>(req.seed), static_cast<std::uint32_t>(req.seed >> 32),
                          static_cast<std::uint32_t>(s)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> n(0.0, sigma_);
        Image img = req.image;
        for (double& x : img.data) x += n(rng);
        r.images.push_back(quantize_8bit(img));
    }
    return r;
}

HttpRefiner::HttpRefiner(std::string base_url, double timeout_s)
    : base_url_(std::move(base_url)), timeout_s_(timeout_s) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

namespace {

httplib::Client make_client(const std::string& url, double timeout_s) {
    httplib::Client cli(url);
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    return cli;
}

} // namespace

RefinerResponse HttpRefiner::refine(const RefinerRequest& req) const {
    req.validate();
    auto cli = make_client(base_url_, timeout_s_);
    const std::string body = request_to_json(req).dump();
    auto res = cli.Post("/refine", body, "application/json");
    if (!res) throw OracleError(base_url_ + "/refine: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw OracleError(base_url_ + "/refine: HTTP " + std::to_string(res->status) + " " + res->body);
    }
    RefinerResponse out;
    try {
        out = response_from_json(json::parse(res->body));
    } catch (const OracleError&) {
        throw;
    } catch (const std::exception& e) {
        throw OracleError(base_url_ + "/refine: malformed response: " + e.what());
    }
    check_response(req, out);
    return out;
}

json HttpRefiner::health() const {
    auto cli = make_client(base_url_, std::min(timeout_s_, 10.0));
    auto res = cli.Get("/health");
    if (!res) throw OracleError(base_url_ + "/health: " + httplib::to_string(res.error()));
    if (res->status != 200) throw OracleError(base_url_ + "/health: HTTP " + std::to_string(res->status));
    try {
        return json::parse(res->body);
    } catch (const std::exception& e) {
        throw OracleError(base_url_ + "/health: malformed response: " + e.what());
    }
}

std::unique_ptr<Refiner> make_refiner(std::string_view spec) {
    auto param = [&](std::string_view prefix, double fallback) {
        if (spec.size() == prefix.size()) return fallback;
        if (spec[prefix.size()] != ':') throw ContractError("unknown refiner '" + std::string(spec) + "'");
        const std::string v(spec.substr(prefix.size() + 1));
        std::size_t used = 0;
        double d = 0.0;
        try {
            d = std::stod(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != v.size() || v.empty()) throw ContractError("bad refiner parameter '" + v + "'");
        return d;
    };
    if (spec == "mock:identity") return std::make_unique<IdentityRefiner>();
    if (spec.starts_with("mock:noise")) return std::make_unique<NoiseRefiner>(param("mock:noise", 0.02));
    if (spec.starts_with("mock:blur")) return std::make_unique<BlurRefiner>(param("mock:blur", 1.0));
    if (spec.starts_with("http://")) return std::make_unique<HttpRefiner>(std::string(spec));
    throw ContractError("unknown refiner '" + std::string(spec) + "'");
}

} // namespace skyfall
