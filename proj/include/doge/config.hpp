#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace doge {

/// Error raised for malformed text input; carries the location.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, std::size_t column, const std::string& what);

  const std::string& path() const { return path_; }
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::string path_;
  std::size_t line_;
  std::size_t column_;
};

/// Flat key-value configuration.
///
/// One `key = value` pair per line; `#` starts a comment; blank lines are
/// ignored. Keys are dotted names such as `solver.max_loops`. Later
/// assignments override earlier ones, which is how command-line overrides
/// are layered on top of files.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value, const std::string& origin = "<override>");
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  void merge(const KeyValueConfig& other);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key,
                                       const std::vector<std::string>& fallback) const;

  /// Keys with the given prefix that were never read, for typo detection.
  std::vector<std::string> unused(std::string_view prefix = "") const;
  /// Serializes in key order, suitable for parse().
  std::string to_string() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  struct Origin {
    std::string path;
    std::size_t line = 0;
  };
  const std::string* find(const std::string& key) const;
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  std::map<std::string, std::string> entries_;
  std::map<std::string, Origin> origins_;
  mutable std::map<std::string, bool> used_;
};

/// Parses a floating-point number that must span the whole string.
bool parse_double(std::string_view text, double& out);
bool parse_int(std::string_view text, std::int64_t& out);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double value);

}  // namespace doge
