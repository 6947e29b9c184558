#include "skyfall/image.hpp"

#include "skyfall/errors.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace skyfall {

namespace {

std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct PngReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t offset = 0;
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t n) {
    auto* cursor = static_cast<PngReadCursor*>(png_get_io_ptr(png));
    if (cursor->offset + n > cursor->bytes.size()) {
        png_error(png, "truncated PNG stream");
    }
    std::memcpy(out, cursor->bytes.data() + cursor->offset, n);
    cursor->offset += n;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

void png_no_flush(png_structp) {}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw ContractError("encode_png supports 1 or 3 channels");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encoding failed");
    }
    png_set_write_fn(png, &out, png_write_to_vector, png_no_flush);
    png_set_IHDR(png, info, img.width, img.height, 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        for (int i = 0; i < img.width * img.channels; ++i) {
            row[i] = to_u8(img.data[static_cast<std::size_t>(y) * img.width * img.channels + i]);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw ParseError("not a PNG stream", 0);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    PngReadCursor cursor{bytes, 0};
    Image img;
    std::vector<std::uint8_t> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("corrupt PNG stream", cursor.offset);
    }
    png_set_read_fn(png, &cursor, png_read_from_span);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int c = png_get_channels(png, info);
    img = Image(w, h, c);
    row.resize(static_cast<std::size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int i = 0; i < w * c; ++i) {
            img.data[static_cast<std::size_t>(y) * w * c + i] = row[i] / 255.0;
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    const auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

void write_pfm(const std::filesystem::path& path, const Image& depth) {
    if (depth.channels != 1) {
        throw ContractError("write_pfm expects a single-channel image");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "Pf\n" << depth.width << " " << depth.height << "\n-1.0\n";
    // PFM stores rows bottom-to-top.
    for (int y = depth.height - 1; y >= 0; --y) {
        for (int x = 0; x < depth.width; ++x) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(depth.at(x, y)));
            const char le[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                                static_cast<char>((bits >> 16) & 0xff),
                                static_cast<char>((bits >> 24) & 0xff)};
            out.write(le, 4);
        }
    }
}

Image read_pfm(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    std::string header;
    std::size_t pos = 0;
    int newlines = 0;
    while (pos < bytes.size() && newlines < 3) {
        if (bytes[pos] == '\n') {
            ++newlines;
        }
        header.push_back(static_cast<char>(bytes[pos++]));
    }
    std::istringstream hs(header);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    hs >> magic >> w >> h >> scale;
    if (magic != "Pf" || w <= 0 || h <= 0) {
        throw ParseError("bad PFM header in " + path.string(), 0);
    }
    if (scale >= 0.0) {
        throw ParseError("big-endian PFM is not supported", 0);
    }
    if (bytes.size() - pos < static_cast<std::size_t>(w) * h * 4) {
        throw ParseError("truncated PFM payload", bytes.size());
    }
    Image img(w, h, 1);
    for (int y = h - 1; y >= 0; --y) {
        for (int x = 0; x < w; ++x) {
            const std::uint32_t bits = std::uint32_t(bytes[pos]) | (std::uint32_t(bytes[pos + 1]) << 8) |
                                       (std::uint32_t(bytes[pos + 2]) << 16) |
                                       (std::uint32_t(bytes[pos + 3]) << 24);
            img.at(x, y) = std::bit_cast<float>(bits);
            pos += 4;
        }
    }
    return img;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) {
        throw ParseError("base64 length is not a multiple of 4", text.size());
    }
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) {
        throw ParseError("invalid base64 payload", 0);
    }
    // EVP_DecodeBlock keeps the zero bytes that padding stands for.
    std::size_t padding = 0;
    if (!text.empty() && text.back() == '=') {
        ++padding;
        if (text.size() > 1 && text[text.size() - 2] == '=') {
            ++padding;
        }
    }
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

Image quantize_8bit(const Image& img) {
    Image out = img;
    for (double& v : out.data) {
        v = to_u8(v) / 255.0;
    }
    return out;
}

} // namespace skyfall
