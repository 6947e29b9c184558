#pragma once

#include "skyfall/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace skyfall {

/// float32 is what splat viewers expect; float64 is lossless for any cloud.
enum class PlyPrecision { float32, float64 };

/// Binary little-endian splat PLY: x y z, nx ny nz (zero), f_dc_0..2,
/// f_rest_0..8 (channel-major: f_rest_{3c+k} is degree-1 basis k of channel c),
/// opacity (logit), scale_0..2 (log), rot_0..3 (w x y z), app_0..23.
std::vector<std::uint8_t> encode_ply(const GaussianCloud& cloud, PlyPrecision precision = PlyPrecision::float32);

/// Accepts any scalar property types and extra properties. A file with more
/// f_rest values (higher SH degree) contributes its degree-1 part. Throws
/// ParseError with the failing byte offset.
GaussianCloud decode_ply(std::span<const std::uint8_t> bytes);

void export_ply(const std::filesystem::path& path, const GaussianCloud& cloud,
                PlyPrecision precision = PlyPrecision::float32);
GaussianCloud import_ply(const std::filesystem::path& path);

} // namespace skyfall
