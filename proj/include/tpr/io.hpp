#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "tpr/geometry.hpp"
#include "tpr/grid.hpp"

namespace tpr::io {

/// Writes through a temporary file in the same directory, then renames over
/// the destination. Nothing is left behind if `writer` throws.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

/// Binary "TPRV" container: magic, u32 version, u32 nx, ny, nz, then
/// little-endian float32 values with x fastest.
void write_volume(const std::filesystem::path& path, const VoxelVolume& volume);
VoxelVolume read_volume(const std::filesystem::path& path);

/// Images use the same container with nz = 1.
void write_image(const std::filesystem::path& path, const ProjectionImage& image);
ProjectionImage read_image(const std::filesystem::path& path);

/// 16-bit binary PGM. Stored value = round(value * scale) with the scale in a
/// "# scale=<s>" header comment; scale maps the image maximum to 65535.
void write_pgm16(const std::filesystem::path& path, const ProjectionImage& image);
ProjectionImage read_pgm16(const std::filesystem::path& path);

/// Reads either format, chosen by extension (.pgm or anything else = TPRV).
ProjectionImage read_any_image(const std::filesystem::path& path);

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(std::string_view bytes);

/// key = value text with '#' comments and optional [section] headers. Each
/// section occurrence becomes its own block, in file order.
struct KeyValueBlock {
    std::string section;  // empty for keys before the first header
    std::map<std::string, std::string> values;
    int line = 0;
};
std::vector<KeyValueBlock> parse_key_values(const std::string& text, const std::string& origin);
std::vector<KeyValueBlock> read_key_value_file(const std::filesystem::path& path);

/// Camera rig file:
///   radius = 1.5
///   [camera]
///   alpha = 0        (degrees)
///   beta = 30
///   gamma = 0
///   width = 145
///   height = 145
///   offset_x = 72.0
///   offset_y = 72.0
///   scale = 1
CameraRig read_rig(const std::filesystem::path& path);
std::string format_rig(const CameraRig& rig);
void write_rig(const std::filesystem::path& path, const CameraRig& rig);

}  // namespace tpr::io
