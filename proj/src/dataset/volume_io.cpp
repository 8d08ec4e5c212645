#include "lumbarseg/dataset/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lumbarseg/kv_text.hpp"

namespace lumbarseg::data {

namespace {

constexpr const char* kFormatName = "lumbarseg-volume";

template <typename T>
struct ElementTraits;
template <>
struct ElementTraits<float> {
  static constexpr const char* name = "float32";
};
template <>
struct ElementTraits<std::uint8_t> {
  static constexpr const char* name = "uint8";
};

template <typename T>
void to_little_endian(T* values, std::size_t count) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (std::size_t i = 0; i < count; ++i) {
      auto* b = reinterpret_cast<unsigned char*>(values + i);
      std::reverse(b, b + sizeof(T));
    }
  }
}

std::string header_error(const std::filesystem::path& path, const KvDocument& doc,
                         const std::string& key, const std::string& what) {
  return path.string() + ": key '" + key + "' at byte offset " +
         std::to_string(doc.offset_of(key)) + ": " + what;
}

Vec3 read_vec3(const std::filesystem::path& path, const KvDocument& doc, const std::string& key) {
  const auto v = doc.get_doubles(key);
  if (v.size() != 3) throw FormatError(header_error(path, doc, key, "expected 3 numbers"));
  return Vec3(v[0], v[1], v[2]);
}

template <typename T>
void save_grid(const Grid<T>& grid, const std::filesystem::path& header_path) {
  const auto payload = payload_path_for(header_path);
  KvDocument doc;
  doc.set("format", kFormatName);
  doc.set("version", std::to_string(kVolumeFormatVersion));
  doc.set("extents", std::to_string(grid.extents[0]) + " " + std::to_string(grid.extents[1]) +
                         " " + std::to_string(grid.extents[2]));
  doc.set("spacing", format_doubles(grid.spacing.data(), 3));
  doc.set("origin", format_doubles(grid.origin.data(), 3));
  doc.set("element_type", ElementTraits<T>::name);
  doc.set("byte_order", "little");
  doc.set("data_file", payload.filename().string());
  if (header_path.has_parent_path()) std::filesystem::create_directories(header_path.parent_path());
  doc.save(header_path);

  std::vector<T> bytes = grid.values;
  to_little_endian(bytes.data(), bytes.size());
  std::ofstream out(payload, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size() * sizeof(T)));
  if (!out) throw FormatError("cannot write " + payload.string());
}

template <typename T>
Grid<T> load_grid(const std::filesystem::path& header_path) {
  const KvDocument doc = KvDocument::load(header_path);
  for (const char* key : {"format", "version", "extents", "spacing", "origin", "element_type",
                          "byte_order", "data_file"}) {
    if (!doc.contains(key)) {
      throw FormatError(header_path.string() + ": missing key '" + key + "'");
    }
  }
  if (doc.get("format") != kFormatName) {
    throw FormatError(header_error(header_path, doc, "format", "unknown format '" + doc.get("format") + "'"));
  }
  if (doc.get_int("version") != kVolumeFormatVersion) {
    throw FormatError(header_error(header_path, doc, "version", "unsupported version " + doc.get("version")));
  }
  const std::string element = doc.get("element_type");
  if (element != "float32" && element != "uint8") {
    throw FormatError(header_error(header_path, doc, "element_type", "unsupported element type '" + element + "'"));
  }
  if (element != ElementTraits<T>::name) {
    throw FormatError(header_error(header_path, doc, "element_type",
                                   "expected " + std::string(ElementTraits<T>::name) + ", found " + element));
  }
  if (doc.get("byte_order") != "little") {
    throw FormatError(header_error(header_path, doc, "byte_order", "only little-endian payloads are supported"));
  }
  const auto ext = doc.get_ints("extents");
  if (ext.size() != 3) throw FormatError(header_error(header_path, doc, "extents", "expected 3 integers"));
  for (long long e : ext) {
    if (e < 1) throw FormatError(header_error(header_path, doc, "extents", "extents must be >= 1"));
  }
  const Vec3 spacing = read_vec3(header_path, doc, "spacing");
  if (!(spacing.array() > 0.0).all() || !spacing.allFinite()) {
    throw FormatError(header_error(header_path, doc, "spacing", "spacing must be positive"));
  }
  const Vec3 origin = read_vec3(header_path, doc, "origin");
  if (!origin.allFinite()) throw FormatError(header_error(header_path, doc, "origin", "origin must be finite"));

  Grid<T> grid(Extents{ext[0], ext[1], ext[2]}, T{}, spacing, origin);
  const auto payload = header_path.parent_path() / doc.get("data_file");
  std::ifstream in(payload, std::ios::binary);
  if (!in) {
    throw FormatError(header_error(header_path, doc, "data_file", "cannot open " + payload.string()));
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = grid.values.size() * sizeof(T);
  if (bytes.size() != expected) {
    throw FormatError(payload.string() + ": payload size mismatch, expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  std::memcpy(grid.values.data(), bytes.data(), expected);
  to_little_endian(grid.values.data(), grid.values.size());
  if constexpr (std::is_same_v<T, std::uint8_t>) {
    for (std::size_t i = 0; i < grid.values.size(); ++i) {
      if (grid.values[i] > kMaxLabel) {
        throw FormatError(payload.string() + ": label " + std::to_string(grid.values[i]) +
                          " out of range at byte offset " + std::to_string(i));
      }
    }
  }
  return grid;
}

}  // namespace

std::filesystem::path payload_path_for(const std::filesystem::path& header_path) {
  auto p = header_path;
  p.replace_extension(".raw");
  return p;
}

void save_volume(const Volume& volume, const std::filesystem::path& header_path) {
  save_grid(volume, header_path);
}
void save_labels(const LabelVolume& labels, const std::filesystem::path& header_path) {
  save_grid(labels, header_path);
}
Volume load_volume(const std::filesystem::path& header_path) { return load_grid<float>(header_path); }
LabelVolume load_labels(const std::filesystem::path& header_path) {
  return load_grid<std::uint8_t>(header_path);
}

void save_box(const BoundingBox3D& box, const std::filesystem::path& path) {
  KvDocument doc;
  doc.set("low", format_doubles(box.low.data(), 3));
  doc.set("high", format_doubles(box.high.data(), 3));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  doc.save(path);
}

BoundingBox3D load_box(const std::filesystem::path& path) {
  const KvDocument doc = KvDocument::load(path);
  BoundingBox3D box{read_vec3(path, doc, "low"), read_vec3(path, doc, "high")};
  if (!box.valid()) throw FormatError(path.string() + ": box corners are not ordered");
  return box;
}

}  // namespace lumbarseg::data
