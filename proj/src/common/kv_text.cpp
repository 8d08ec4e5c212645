#include "lumbarseg/kv_text.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "lumbarseg/errors.hpp"

namespace lumbarseg {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != ',') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

KvDocument KvDocument::parse(std::string_view text) {
  KvDocument doc;
  std::string section;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::size_t line_offset = pos;
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw FormatError("malformed section header at byte offset " + std::to_string(line_offset));
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw FormatError("expected key=value at byte offset " + std::to_string(line_offset));
    }
    const std::string key_part(trim(line.substr(0, eq)));
    if (key_part.empty()) {
      throw FormatError("empty key at byte offset " + std::to_string(line_offset));
    }
    const std::string key = section.empty() ? key_part : section + "." + key_part;
    if (doc.entries_.count(key) != 0) {
      throw FormatError("duplicate key '" + key + "' at byte offset " + std::to_string(line_offset));
    }
    doc.entries_[key] = KvEntry{std::string(trim(line.substr(eq + 1))), line_offset};
  }
  return doc;
}

KvDocument KvDocument::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

bool KvDocument::contains(const std::string& key) const { return entries_.count(key) != 0; }

const std::string& KvDocument::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw FormatError("missing key '" + key + "'");
  return it->second.value;
}

std::string KvDocument::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.value;
}

std::size_t KvDocument::offset_of(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? 0 : it->second.byte_offset;
}

double KvDocument::get_double(const std::string& key) const {
  try {
    return parse_double(get(key));
  } catch (const FormatError& e) {
    throw FormatError("key '" + key + "' at byte offset " + std::to_string(offset_of(key)) + ": " +
                      e.what());
  }
}

double KvDocument::get_double_or(const std::string& key, double fallback) const {
  return contains(key) ? get_double(key) : fallback;
}

long long KvDocument::get_int(const std::string& key) const {
  try {
    return parse_int(get(key));
  } catch (const FormatError& e) {
    throw FormatError("key '" + key + "' at byte offset " + std::to_string(offset_of(key)) + ": " +
                      e.what());
  }
}

long long KvDocument::get_int_or(const std::string& key, long long fallback) const {
  return contains(key) ? get_int(key) : fallback;
}

std::vector<double> KvDocument::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (auto tok : split_ws(get(key))) {
    try {
      out.push_back(parse_double(tok));
    } catch (const FormatError& e) {
      throw FormatError("key '" + key + "' at byte offset " + std::to_string(offset_of(key)) +
                        ": " + e.what());
    }
  }
  return out;
}

std::vector<long long> KvDocument::get_ints(const std::string& key) const {
  std::vector<long long> out;
  for (auto tok : split_ws(get(key))) {
    try {
      out.push_back(parse_int(tok));
    } catch (const FormatError& e) {
      throw FormatError("key '" + key + "' at byte offset " + std::to_string(offset_of(key)) +
                        ": " + e.what());
    }
  }
  return out;
}

void KvDocument::set(const std::string& key, std::string value) {
  entries_[key] = KvEntry{std::move(value), 0};
}

std::string KvDocument::to_string() const {
  std::ostringstream out;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, entry] : entries_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      out << key << '=' << entry.value << '\n';
    } else {
      sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), entry.value);
    }
  }
  for (const auto& [name, items] : sections) {
    out << '[' << name << "]\n";
    for (const auto& [k, v] : items) out << k << '=' << v << '\n';
  }
  return out.str();
}

void KvDocument::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_string();
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string format_doubles(const double* values, std::size_t count) {
  std::string out;
  for (std::size_t i = 0; i < count; ++i) {
    if (i) out += ' ';
    out += format_double(values[i]);
  }
  return out;
}

double parse_double(std::string_view text) {
  text = trim(text);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("not a number: '" + std::string(text) + "'");
  }
  return value;
}

long long parse_int(std::string_view text) {
  text = trim(text);
  long long value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("not an integer: '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace lumbarseg
