#pragma once

#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ensel/text.hpp"

namespace ensel {

// An ordered key=value document. It backs both experiment configs and stage
// manifests: entries keep their insertion order, so writing a document that
// was built the same way twice produces byte-identical files.
//
// File syntax: one `key=value` per line; blank lines and lines whose first
// non-space character is '#' are ignored. Keys and values are trimmed of
// surrounding whitespace. Values may contain '=', spaces, and '#'; they may
// not contain newlines. A key may appear once only.
struct ConfigDoc {
  std::vector<std::pair<std::string, std::string>> entries;

  bool has(const std::string& key) const { return find(key) != entries.size(); }

  const std::string& get(const std::string& key) const {
    const std::size_t i = find(key);
    if (i == entries.size()) throw std::runtime_error("config: missing key '" + key + "'");
    return entries[i].second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    const std::size_t i = find(key);
    return i == entries.size() ? fallback : entries[i].second;
  }

  // Replaces the value in place when the key exists, appends otherwise.
  void set(const std::string& key, const std::string& value) {
    detail_check_key(key);
    detail_check_value(key, value);
    const std::size_t i = find(key);
    if (i == entries.size())
      entries.emplace_back(key, value);
    else
      entries[i].second = value;
  }

  std::size_t find(const std::string& key) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].first == key) return i;
    return entries.size();
  }

  static void detail_check_key(const std::string& key) {
    if (key.empty()) throw std::runtime_error("config: empty key");
    for (const char c : key)
      if (c == '=' || c == '\n' || c == '#' || c == ' ' || c == '\t')
        throw std::runtime_error("config: key '" + key + "' contains forbidden characters");
  }

  static void detail_check_value(const std::string& key, const std::string& value) {
    if (value.find('\n') != std::string::npos)
      throw std::runtime_error("config: value for '" + key + "' contains a newline");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

inline ConfigDoc parse_config(std::istream& in, const std::string& origin = "<stream>") {
  ConfigDoc doc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (doc.has(key))
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    doc.entries.emplace_back(key, value);
  }
  return doc;
}

inline ConfigDoc load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  return parse_config(in, path);
}

inline void write_config(std::ostream& out, const ConfigDoc& doc) {
  for (const auto& [key, value] : doc.entries) out << key << '=' << value << '\n';
}

inline void save_config(const std::string& path, const ConfigDoc& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_config: cannot open " + path);
  write_config(out, doc);
  if (!out) throw std::runtime_error("save_config: write failed for " + path);
}

// Command-line override "key=value"; the flagged value wins over the file.
inline void apply_override(ConfigDoc& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::runtime_error("override '" + assignment + "' is not of the form key=value");
  doc.set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

// ---------------------------------------------------------------------------
// Typed getters
// ---------------------------------------------------------------------------

inline double config_double(const ConfigDoc& doc, const std::string& key) {
  return parse_double(doc.get(key), "config key '" + key + "'");
}

inline double config_double_or(const ConfigDoc& doc, const std::string& key, double fallback) {
  return doc.has(key) ? config_double(doc, key) : fallback;
}

inline long long config_int(const ConfigDoc& doc, const std::string& key) {
  return parse_int(doc.get(key), "config key '" + key + "'");
}

inline long long config_int_or(const ConfigDoc& doc, const std::string& key, long long fallback) {
  return doc.has(key) ? config_int(doc, key) : fallback;
}

inline std::size_t config_count(const ConfigDoc& doc, const std::string& key) {
  const long long v = config_int(doc, key);
  if (v < 0) throw std::runtime_error("config key '" + key + "': negative count " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

inline std::size_t config_count_or(const ConfigDoc& doc, const std::string& key, std::size_t fallback) {
  return doc.has(key) ? config_count(doc, key) : fallback;
}

inline bool config_bool(const ConfigDoc& doc, const std::string& key) {
  const std::string& v = doc.get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline bool config_bool_or(const ConfigDoc& doc, const std::string& key, bool fallback) {
  return doc.has(key) ? config_bool(doc, key) : fallback;
}

// A list of numbers separated by commas and/or whitespace, e.g. "0.01, 0.02".
inline std::vector<double> config_doubles(const ConfigDoc& doc, const std::string& key) {
  std::string v = doc.get(key);
  for (char& c : v)
    if (c == ',') c = ' ';
  std::istringstream in(v);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(parse_double(tok, "config key '" + key + "'"));
  if (out.empty()) throw std::runtime_error("config key '" + key + "': empty list");
  return out;
}

inline std::vector<std::size_t> config_counts(const ConfigDoc& doc, const std::string& key) {
  std::string v = doc.get(key);
  for (char& c : v)
    if (c == ',') c = ' ';
  std::istringstream in(v);
  std::vector<std::size_t> out;
  std::string tok;
  while (in >> tok) {
    const long long n = parse_int(tok, "config key '" + key + "'");
    if (n < 0) throw std::runtime_error("config key '" + key + "': negative count " + tok);
    out.push_back(static_cast<std::size_t>(n));
  }
  if (out.empty()) throw std::runtime_error("config key '" + key + "': empty list");
  return out;
}

}  // namespace ensel
