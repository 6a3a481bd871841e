#include "doge/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace doge {

ParseError::ParseError(const std::string& path, std::size_t line, std::size_t column,
                       const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
      path_(path),
      line_(line),
      column_(column) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    const auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  for (char c : key) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '.' || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

bool parse_int(std::string_view text, std::int64_t& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& origin) {
  KeyValueConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    ++line_no;
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto col = line.find_first_not_of(" \t") + 1;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(origin, line_no, col, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (!valid_key(key)) throw ParseError(origin, line_no, col, "invalid key '" + std::string(key) + "'");
    const auto value = trim(line.substr(eq + 1));
    if (value.empty()) throw ParseError(origin, line_no, eq + 2, "missing value for '" + std::string(key) + "'");
    cfg.entries_[std::string(key)] = std::string(value);
    cfg.origins_[std::string(key)] = {origin, line_no};
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KeyValueConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
  if (!valid_key(key)) throw std::invalid_argument("invalid config key '" + key + "'");
  entries_[key] = std::string(trim(value));
  origins_[key] = {origin, 0};
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.entries_) {
    entries_[k] = v;
    origins_[k] = other.origins_.at(k);
  }
}

const std::string* KeyValueConfig::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  used_[key] = true;
  return &it->second;
}

void KeyValueConfig::fail(const std::string& key, const std::string& what) const {
  const auto& o = origins_.at(key);
  const std::string msg = "'" + key + "': " + what + " (got '" + entries_.at(key) + "')";
  if (o.line > 0) throw ParseError(o.path, o.line, 1, msg);
  throw std::invalid_argument(o.path + ": " + msg);
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  return v ? *v : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  double out = 0.0;
  if (!parse_double(*v, out)) fail(key, "expected a number");
  return out;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  std::int64_t out = 0;
  if (!parse_int(*v, out)) fail(key, "expected an integer");
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  fail(key, "expected a boolean");
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key,
                                                const std::vector<double>& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto item : split_list(*v)) {
    double d = 0.0;
    if (!parse_double(item, d)) fail(key, "expected a comma-separated list of numbers");
    out.push_back(d);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::get_strings(const std::string& key,
                                                     const std::vector<std::string>& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  std::vector<std::string> out;
  for (const auto item : split_list(*v)) out.emplace_back(item);
  return out;
}

std::vector<std::string> KeyValueConfig::unused(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (k.rfind(prefix, 0) == 0 && !used_.count(k)) out.push_back(k);
  }
  return out;
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace doge
