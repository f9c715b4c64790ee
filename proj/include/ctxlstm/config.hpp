#pragma once

#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace ctxlstm {

// Flat key=value document, one pair per line, '#' comments. Keys are kept
// sorted so the serialization is canonical.
class FlatConfig {
 public:
  static FlatConfig parse(std::string_view text);
  static FlatConfig read(std::istream& in);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::uint64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Config error naming the first key outside `known`.
  void reject_unknown(std::initializer_list<std::string_view> known) const;
  // Copies every key of `other` that is not already set.
  void merge_defaults(const FlatConfig& other);

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_string() const;
  void write(std::ostream& out) const;
  bool operator==(const FlatConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

// Shortest decimal that round-trips the double.
std::string format_double(double v);

}  // namespace ctxlstm
