#pragma once

// Volumes are stored as a text header (key=value) next to a raw little-endian
// payload. Header keys: format, version, extents, spacing, origin,
// element_type (float32 | uint8), byte_order (little), data_file.

#include <filesystem>

#include "lumbarseg/dataset/volume.hpp"

namespace lumbarseg::data {

inline constexpr int kVolumeFormatVersion = 1;

// Payload path used when saving a header at `header_path` (".raw" suffix).
std::filesystem::path payload_path_for(const std::filesystem::path& header_path);

void save_volume(const Volume& volume, const std::filesystem::path& header_path);
void save_labels(const LabelVolume& labels, const std::filesystem::path& header_path);

// Throw FormatError naming the byte offset of the offending header line, or
// the expected and actual payload sizes.
Volume load_volume(const std::filesystem::path& header_path);
LabelVolume load_labels(const std::filesystem::path& header_path);

void save_box(const BoundingBox3D& box, const std::filesystem::path& path);
BoundingBox3D load_box(const std::filesystem::path& path);

}  // namespace lumbarseg::data
