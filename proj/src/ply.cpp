#include "skyfall/ply.hpp"

#include "skyfall/errors.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace skyfall {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY codec assumes a little-endian host");

constexpr int kRestPerChannel = kShBases - 1;

std::vector<std::string> property_names() {
    std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < 3 * kRestPerChannel; ++i) names.push_back("f_rest_" + std::to_string(i));
    names.push_back("opacity");
    for (int i = 0; i < 3; ++i) names.push_back("scale_" + std::to_string(i));
    for (int i = 0; i < 4; ++i) names.push_back("rot_" + std::to_string(i));
    for (int i = 0; i < kAppearanceCodeDim; ++i) names.push_back("app_" + std::to_string(i));
    return names;
}

std::vector<double> flatten(const Gaussian& g) {
    std::vector<double> v;
    v.reserve(62);
    v.insert(v.end(), {g.position.x(), g.position.y(), g.position.z(), 0.0, 0.0, 0.0});
    for (int c = 0; c < 3; ++c) v.push_back(g.sh(0, c));
    for (int c = 0; c < 3; ++c)
        for (int k = 1; k < kShBases; ++k) v.push_back(g.sh(k, c));
    v.push_back(g.opacity_logit);
    for (int i = 0; i < 3; ++i) v.push_back(g.log_scale[i]);
    for (int i = 0; i < 4; ++i) v.push_back(g.rotation[i]);
    for (int i = 0; i < kAppearanceCodeDim; ++i) v.push_back(g.appearance[i]);
    return v;
}

enum class Scalar { i8, u8, i16, u16, i32, u32, f32, f64 };

bool parse_scalar(const std::string& t, Scalar& s) {
    static const std::map<std::string, Scalar> kTypes = {
        {"char", Scalar::i8},    {"int8", Scalar::i8},     {"uchar", Scalar::u8},   {"uint8", Scalar::u8},
        {"short", Scalar::i16},  {"int16", Scalar::i16},   {"ushort", Scalar::u16}, {"uint16", Scalar::u16},
        {"int", Scalar::i32},    {"int32", Scalar::i32},   {"uint", Scalar::u32},   {"uint32", Scalar::u32},
        {"float", Scalar::f32},  {"float32", Scalar::f32}, {"double", Scalar::f64}, {"float64", Scalar::f64}};
    auto it = kTypes.find(t);
    if (it == kTypes.end()) return false;
    s = it->second;
    return true;
}

std::size_t scalar_size(Scalar s) {
    switch (s) {
    case Scalar::i8:
    case Scalar::u8: return 1;
    case Scalar::i16:
    case Scalar::u16: return 2;
    case Scalar::i32:
    case Scalar::u32:
    case Scalar::f32: return 4;
    case Scalar::f64: return 8;
    }
    return 0;
}

template <class T>
double load(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
}

double read_scalar(Scalar s, const std::uint8_t* p) {
    switch (s) {
    case Scalar::i8: return load<std::int8_t>(p);
    case Scalar::u8: return load<std::uint8_t>(p);
    case Scalar::i16: return load<std::int16_t>(p);
    case Scalar::u16: return load<std::uint16_t>(p);
    case Scalar::i32: return load<std::int32_t>(p);
    case Scalar::u32: return load<std::uint32_t>(p);
    case Scalar::f32: return load<float>(p);
    case Scalar::f64: return load<double>(p);
    }
    return 0.0;
}

struct Property {
    std::string name;
    Scalar type;
    std::size_t offset;
};

struct Element {
    std::string name;
    std::uint64_t count = 0;
    std::vector<Property> props;
    std::size_t stride = 0;
};

} // namespace

std::vector<std::uint8_t> encode_ply(const GaussianCloud& cloud, PlyPrecision precision) {
    const char* type = precision == PlyPrecision::float32 ? "float" : "double";
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << '\n';
    for (const std::string& n : property_names()) header << "property " << type << ' ' << n << '\n';
    header << "end_header\n";
    const std::string h = header.str();

    const std::size_t width = precision == PlyPrecision::float32 ? 4 : 8;
    const std::size_t nprops = property_names().size();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.reserve(h.size() + cloud.size() * nprops * width);
    for (const Gaussian& g : cloud.gaussians) {
        for (double x : flatten(g)) {
            std::uint8_t buf[8];
            if (precision == PlyPrecision::float32) {
                const float f = static_cast<float>(x);
                std::memcpy(buf, &f, 4);
            } else {
                std::memcpy(buf, &x, 8);
            }
            out.insert(out.end(), buf, buf + width);
        }
    }
    return out;
}

GaussianCloud decode_ply(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto next_line = [&](std::size_t& start) -> std::string {
        start = pos;
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        if (pos >= bytes.size()) throw ParseError("PLY header is not terminated", start);
        std::string line(reinterpret_cast<const char*>(bytes.data()) + start, pos - start);
        ++pos;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };

    std::size_t line_start = 0;
    if (next_line(line_start) != "ply") throw ParseError("missing PLY magic", 0);

    std::vector<Element> elements;
    bool format_seen = false;
    for (;;) {
        const std::string line = next_line(line_start);
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "end_header") break;
        if (key.empty() || key == "comment" || key == "obj_info") continue;
        if (key == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian") throw ParseError("unsupported PLY format '" + fmt + "'", line_start);
            format_seen = true;
        } else if (key == "element") {
            Element e;
            std::string count;
            ls >> e.name >> count;
            auto [ptr, ec] = std::from_chars(count.data(), count.data() + count.size(), e.count);
            if (e.name.empty() || ec != std::errc() || ptr != count.data() + count.size()) {
                throw ParseError("malformed element line", line_start);
            }
            elements.push_back(std::move(e));
        } else if (key == "property") {
            if (elements.empty()) throw ParseError("property before any element", line_start);
            std::string type, name;
            ls >> type >> name;
            if (type == "list") {
                // Faces and the like; fine after the vertex block since it is never read.
                if (elements.size() == 1) throw ParseError("list properties are not supported on vertices", line_start);
                continue;
            }
            Scalar s;
            if (!parse_scalar(type, s) || name.empty()) {
                throw ParseError("malformed property line '" + line + "'", line_start);
            }
            Element& e = elements.back();
            e.props.push_back({name, s, e.stride});
            e.stride += scalar_size(s);
        } else {
            throw ParseError("unexpected header keyword '" + key + "'", line_start);
        }
    }
    const std::size_t data_start = pos;
    if (!format_seen) throw ParseError("PLY header has no format line", data_start);
    if (elements.empty() || elements.front().name != "vertex") {
        throw ParseError("first PLY element must be 'vertex'", data_start);
    }
    const Element& v = elements.front();

    std::map<std::string, const Property*> by_name;
    for (const Property& p : v.props) by_name[p.name] = &p;
    auto require = [&](const std::string& n) {
        auto it = by_name.find(n);
        if (it == by_name.end()) throw ParseError("missing required property '" + n + "'", data_start);
        return it->second;
    };
    auto optional = [&](const std::string& n) -> const Property* {
        auto it = by_name.find(n);
        return it == by_name.end() ? nullptr : it->second;
    };

    const Property* pos_p[3] = {require("x"), require("y"), require("z")};
    const Property* dc_p[3] = {require("f_dc_0"), require("f_dc_1"), require("f_dc_2")};
    const Property* op_p = require("opacity");
    const Property* sc_p[3] = {require("scale_0"), require("scale_1"), require("scale_2")};
    const Property* rot_p[4] = {require("rot_0"), require("rot_1"), require("rot_2"), require("rot_3")};

    int rest_count = 0;
    while (optional("f_rest_" + std::to_string(rest_count)) != nullptr) ++rest_count;
    if (rest_count % 3 != 0) throw ParseError("f_rest count is not a multiple of 3", data_start);
    const int rest_per_channel = rest_count / 3;
    const int use_rest = std::min(rest_per_channel, kRestPerChannel);

    const std::uint64_t need = v.count * v.stride;
    if (v.stride != 0 && v.count > (bytes.size() - data_start) / v.stride) {
        throw ParseError("truncated vertex data: expected " + std::to_string(need) + " bytes", bytes.size());
    }

    GaussianCloud cloud;
    cloud.gaussians.resize(v.count);
    for (std::uint64_t i = 0; i < v.count; ++i) {
        const std::uint8_t* row = bytes.data() + data_start + i * v.stride;
        auto get = [&](const Property* p) { return read_scalar(p->type, row + p->offset); };
        Gaussian& g = cloud.gaussians[i];
        for (int k = 0; k < 3; ++k) g.position[k] = get(pos_p[k]);
        for (int c = 0; c < 3; ++c) g.sh(0, c) = get(dc_p[c]);
        for (int c = 0; c < 3; ++c) {
            for (int k = 0; k < use_rest; ++k) {
                g.sh(k + 1, c) = get(by_name["f_rest_" + std::to_string(c * rest_per_channel + k)]);
            }
        }
        g.opacity_logit = get(op_p);
        for (int k = 0; k < 3; ++k) g.log_scale[k] = get(sc_p[k]);
        for (int k = 0; k < 4; ++k) g.rotation[k] = get(rot_p[k]);
        const double n = g.rotation.norm();
        if (!(n > 0.0)) throw ParseError("zero rotation quaternion in vertex " + std::to_string(i), data_start + i * v.stride);
        if (std::abs(n - 1.0) > 1e-6) g.rotation /= n;
        for (int k = 0; k < kAppearanceCodeDim; ++k) {
            if (const Property* p = optional("app_" + std::to_string(k))) g.appearance[k] = get(p);
        }
    }
    return cloud;
}

void export_ply(const std::filesystem::path& path, const GaussianCloud& cloud, PlyPrecision precision) {
    if (path.empty()) throw IoError("export_ply: empty path");
    const auto bytes = encode_ply(cloud, precision);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

GaussianCloud import_ply(const std::filesystem::path& path) {
    if (path.empty()) throw IoError("import_ply: empty path");
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_ply(bytes);
}

} // namespace skyfall
