#pragma once

// Plain-text key=value documents with optional [section] headers. Used for
// volume headers, box files, phantom specs, configs and metric reports.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lumbarseg {

struct KvEntry {
  std::string value;
  std::size_t byte_offset = 0;  // start of the line that defined the key
};

class KvDocument {
 public:
  // Keys inside a section are stored as "section.key".
  static KvDocument parse(std::string_view text);
  static KvDocument load(const std::filesystem::path& path);

  bool contains(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::size_t offset_of(const std::string& key) const;

  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<long long> get_ints(const std::string& key) const;

  void set(const std::string& key, std::string value);
  const std::map<std::string, KvEntry>& entries() const { return entries_; }

  // Keys grouped by section prefix; unsectioned keys first.
  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, KvEntry> entries_;
};

// Shortest representation that parses back to the identical double.
std::string format_double(double value);
std::string format_doubles(const double* values, std::size_t count);

template <std::size_t N>
std::string format_doubles(const std::array<double, N>& values) {
  return format_doubles(values.data(), N);
}

double parse_double(std::string_view text);
long long parse_int(std::string_view text);

}  // namespace lumbarseg
