#include "ctxlstm/config.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <iterator>
#include <ostream>

#include "ctxlstm/common.hpp"

namespace ctxlstm {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

FlatConfig FlatConfig::parse(std::string_view text) {
  FlatConfig c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorKind::Config, "config line " + std::to_string(line_no) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorKind::Config, "config line " + std::to_string(line_no) + ": empty key");
    c.values_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return c;
}

FlatConfig FlatConfig::read(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse(text);
}

void FlatConfig::set(const std::string& key, double value) { values_[key] = format_double(value); }

const std::string& FlatConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::Config, "missing config key '" + key + "'");
  return it->second;
}

std::string FlatConfig::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double FlatConfig::get_double(const std::string& key) const {
  const auto& s = get(key);
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    fail(ErrorKind::Config, "config key '" + key + "': '" + s + "' is not a number");
  return v;
}

std::uint64_t FlatConfig::get_uint(const std::string& key) const {
  const auto& s = get(key);
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    fail(ErrorKind::Config, "config key '" + key + "': '" + s + "' is not a non-negative integer");
  return v;
}

bool FlatConfig::get_bool(const std::string& key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(ErrorKind::Config, "config key '" + key + "': '" + s + "' is not a boolean");
}

void FlatConfig::reject_unknown(std::initializer_list<std::string_view> known) const {
  for (const auto& [key, value] : values_)
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail(ErrorKind::Config, "unknown config key '" + key + "'");
}

void FlatConfig::merge_defaults(const FlatConfig& other) {
  for (const auto& [key, value] : other.values_) values_.try_emplace(key, value);
}

std::string FlatConfig::to_string() const {
  std::string s;
  for (const auto& [key, value] : values_) s += key + '=' + value + '\n';
  return s;
}

void FlatConfig::write(std::ostream& out) const { out << to_string(); }

}  // namespace ctxlstm
