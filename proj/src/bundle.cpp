#include "skyfall/bundle.hpp"

#include "skyfall/checksum.hpp"
#include "skyfall/config.hpp"
#include "skyfall/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace skyfall {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "bundle codec assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'K', 'Y', 'F', 'A', 'L', 'L', 'B'};
constexpr std::size_t kPrefix = 8 + 4 + 8;
constexpr std::size_t kDigest = 32;

void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

void put_doubles(std::vector<std::uint8_t>& out, std::span<const double> v) {
    put_bytes(out, v.data(), v.size() * sizeof(double));
}

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t end)
        : bytes_(bytes), pos_(pos), end_(end) {}

    void doubles(std::span<double> out) {
        const std::size_t n = out.size() * sizeof(double);
        if (end_ - pos_ < n) throw ParseError("bundle payload is truncated", end_);
        std::memcpy(out.data(), bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_, end_;
};

} // namespace

std::vector<std::uint8_t> encode_bundle(const SceneBundle& b) {
    json cams = json::array();
    for (const CameraPinhole& c : b.cameras) cams.push_back(camera_to_json(c));
    json manifest = json::array();
    for (const ManifestEntry& m : b.manifest) {
        manifest.push_back({{"image", m.image},
                            {"camera", m.camera},
                            {"embedding_index", m.embedding_index},
                            {"provenance", std::string(provenance_name(m.provenance))}});
    }
    const AppearanceModel& app = b.model.appearance;
    const json header{{"gaussians", b.model.cloud.size()},
                      {"images", app.num_images()},
                      {"mlp_params", app.mlp_params.size()},
                      {"cameras", cams},
                      {"manifest", manifest},
                      {"config", b.config},
                      {"seed", b.seed}};
    const std::string h = header.dump();

    std::vector<std::uint8_t> out;
    put_bytes(out, kMagic, sizeof kMagic);
    const std::uint32_t version = kBundleVersion;
    put_bytes(out, &version, 4);
    const std::uint64_t hlen = h.size();
    put_bytes(out, &hlen, 8);
    put_bytes(out, h.data(), h.size());
    for (const Gaussian& g : b.model.cloud.gaussians) {
        for (ParamClass c : kAllParamClasses) put_doubles(out, param_span(g, c));
    }
    // Embeddings row-major so each image's code is contiguous.
    for (int i = 0; i < app.num_images(); ++i) {
        const Eigen::VectorXd e = app.embeddings.row(i).transpose();
        put_doubles(out, std::span<const double>(e.data(), e.size()));
    }
    put_doubles(out, std::span<const double>(app.mlp_params.data(), app.mlp_params.size()));
    const Sha256Digest d = sha256(out);
    out.insert(out.end(), d.begin(), d.end());
    return out;
}

SceneBundle decode_bundle(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPrefix + kDigest) throw ParseError("file too short for a scene bundle", bytes.size());
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw ParseError("not a scene bundle (bad magic)", 0);
    const std::size_t body = bytes.size() - kDigest;
    const Sha256Digest expect = sha256(bytes.first(body));
    if (std::memcmp(expect.data(), bytes.data() + body, kDigest) != 0) {
        throw ChecksumError("scene bundle checksum mismatch");
    }
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    if (version > kBundleVersion) {
        throw VersionError("scene bundle version " + std::to_string(version) + " is newer than supported version " +
                           std::to_string(kBundleVersion));
    }
    if (version == 0) throw VersionError("scene bundle version 0 is invalid");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 12, 8);
    if (hlen > body - kPrefix) throw ParseError("bundle header length exceeds file size", 12);

    json header;
    try {
        header = json::parse(bytes.begin() + kPrefix, bytes.begin() + kPrefix + hlen);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("bundle header: ") + e.what(), kPrefix + e.byte);
    }

    SceneBundle b;
    b.version = version;
    try {
        b.seed = header.at("seed").get<std::uint64_t>();
        b.config = header.at("config");
        for (const json& c : header.at("cameras")) b.cameras.push_back(camera_from_json(c));
        for (const json& m : header.at("manifest")) {
            b.manifest.push_back({m.at("image").get<std::string>(), m.at("camera").get<int>(),
                                  m.at("embedding_index").get<int>(),
                                  parse_provenance(m.at("provenance").get<std::string>())});
        }
        const auto n = header.at("gaussians").get<std::size_t>();
        const auto images = header.at("images").get<int>();
        const auto mlp = header.at("mlp_params").get<std::size_t>();
        if (images < 0 || (mlp != 0 && mlp != AppearanceModel::kMlpParamCount)) {
            throw ParseError("bundle header has an invalid appearance layout", kPrefix);
        }
        Reader r(bytes, kPrefix + hlen, body);
        b.model.cloud.gaussians.resize(n);
        for (Gaussian& g : b.model.cloud.gaussians) {
            for (ParamClass c : kAllParamClasses) r.doubles(param_span(g, c));
        }
        b.model.appearance.embeddings.resize(images, kImageEmbeddingDim);
        for (int i = 0; i < images; ++i) {
            Eigen::VectorXd e(kImageEmbeddingDim);
            r.doubles(std::span<double>(e.data(), e.size()));
            b.model.appearance.embeddings.row(i) = e.transpose();
        }
        b.model.appearance.mlp_params.resize(static_cast<Eigen::Index>(mlp));
        r.doubles(std::span<double>(b.model.appearance.mlp_params.data(), mlp));
        if (r.pos() != body) throw ParseError("unexpected trailing bytes in bundle payload", r.pos());
    } catch (const json::exception& e) {
        throw ParseError(std::string("bundle header: ") + e.what(), kPrefix);
    } catch (const ContractError& e) {
        throw ParseError(std::string("bundle header: ") + e.what(), kPrefix);
    }
    return b;
}

void save_bundle(const std::filesystem::path& path, const SceneBundle& b) {
    if (path.empty()) throw IoError("save_bundle: empty path");
    const auto bytes = encode_bundle(b);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

SceneBundle load_bundle(const std::filesystem::path& path, bool check_manifest) {
    if (path.empty()) throw IoError("load_bundle: empty path");
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    SceneBundle b = decode_bundle(bytes);
    if (check_manifest) {
        const auto base = path.parent_path();
        for (const ManifestEntry& m : b.manifest) {
            if (!std::filesystem::exists(base / m.image)) {
                throw IoError("manifest image '" + m.image + "' not found next to '" + path.string() + "'");
            }
        }
    }
    return b;
}

} // namespace skyfall
