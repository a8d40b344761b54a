#pragma once

#include "gqncal/common.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace gqncal {

/// Config value: string, boolean, number, or a flat array of those.
struct TomlValue {
  std::variant<std::string, bool, double, std::vector<TomlValue>> v;

  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_bool() const { return std::holds_alternative<bool>(v); }
  bool is_number() const { return std::holds_alternative<double>(v); }
  bool is_array() const { return std::holds_alternative<std::vector<TomlValue>>(v); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline TomlValue parse_value(const std::string& raw, int line);

inline TomlValue parse_scalar(const std::string& text, int line) {
  if (text.empty()) throw SpecError("config line " + std::to_string(line) + ": empty value");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"')
      throw SpecError("config line " + std::to_string(line) + ": unterminated string");
    return {text.substr(1, text.size() - 2)};
  }
  if (text == "true") return {true};
  if (text == "false") return {false};
  double num = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto res = std::from_chars(begin, end, num);
  if (res.ec != std::errc() || res.ptr != end)
    throw SpecError("config line " + std::to_string(line) + ": cannot parse value '" + text +
                    "'");
  return {num};
}

inline TomlValue parse_value(const std::string& raw, int line) {
  const std::string text = trim(raw);
  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']')
      throw SpecError("config line " + std::to_string(line) + ": unterminated array");
    std::vector<TomlValue> items;
    std::string body = text.substr(1, text.size() - 2);
    std::string cur;
    bool in_string = false;
    for (char c : body) {
      if (c == '"') in_string = !in_string;
      if (c == ',' && !in_string) {
        if (!trim(cur).empty()) items.push_back(parse_scalar(trim(cur), line));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) items.push_back(parse_scalar(trim(cur), line));
    return {items};
  }
  return parse_scalar(text, line);
}

inline std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

}  // namespace detail

/// Flat two-level config store: [section] headers (dotted names allowed,
/// kept verbatim) over key = value lines. Strings, booleans, numbers, and
/// flat arrays; # comments. Typed getters throw on missing keys unless a
/// default is supplied.
class TomlTable {
 public:
  static TomlTable parse(const std::string& text) {
    TomlTable t;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      const std::string line = detail::trim(detail::strip_comment(raw));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw SpecError("config line " + std::to_string(line_no) + ": malformed section");
        section = detail::trim(line.substr(1, line.size() - 2));
        if (section.empty())
          throw SpecError("config line " + std::to_string(line_no) + ": empty section name");
        t.data_[section];  // section may stay empty
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw SpecError("config line " + std::to_string(line_no) + ": expected key = value");
      const std::string key = detail::trim(line.substr(0, eq));
      if (key.empty())
        throw SpecError("config line " + std::to_string(line_no) + ": empty key");
      t.data_[section][key] = detail::parse_value(line.substr(eq + 1), line_no);
    }
    return t;
  }

  static TomlTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("config file not found: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = data_.find(section);
    return s != data_.end() && s->second.count(key) > 0;
  }

  bool has_section(const std::string& section) const { return data_.count(section) > 0; }

  const TomlValue& at(const std::string& section, const std::string& key) const {
    const auto s = data_.find(section);
    if (s == data_.end() || s->second.count(key) == 0)
      throw SpecError("config: missing [" + section + "] " + key);
    return s->second.at(key);
  }

  double number(const std::string& section, const std::string& key) const {
    const TomlValue& v = at(section, key);
    if (!v.is_number()) throw SpecError("config: [" + section + "] " + key + " must be a number");
    return std::get<double>(v.v);
  }
  double number(const std::string& section, const std::string& key, double fallback) const {
    return has(section, key) ? number(section, key) : fallback;
  }

  long long integer(const std::string& section, const std::string& key) const {
    const double d = number(section, key);
    const long long i = static_cast<long long>(d);
    if (static_cast<double>(i) != d)
      throw SpecError("config: [" + section + "] " + key + " must be an integer");
    return i;
  }
  long long integer(const std::string& section, const std::string& key, long long fallback) const {
    return has(section, key) ? integer(section, key) : fallback;
  }

  std::string str(const std::string& section, const std::string& key) const {
    const TomlValue& v = at(section, key);
    if (!v.is_string()) throw SpecError("config: [" + section + "] " + key + " must be a string");
    return std::get<std::string>(v.v);
  }
  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    return has(section, key) ? str(section, key) : fallback;
  }

  bool boolean(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const TomlValue& v = at(section, key);
    if (!v.is_bool()) throw SpecError("config: [" + section + "] " + key + " must be a boolean");
    return std::get<bool>(v.v);
  }

  std::vector<double> number_array(const std::string& section, const std::string& key) const {
    const TomlValue& v = at(section, key);
    std::vector<double> out;
    if (v.is_number()) {  // a bare number acts as a one-element array
      out.push_back(std::get<double>(v.v));
      return out;
    }
    if (!v.is_array())
      throw SpecError("config: [" + section + "] " + key + " must be an array of numbers");
    for (const TomlValue& item : std::get<std::vector<TomlValue>>(v.v)) {
      if (!item.is_number())
        throw SpecError("config: [" + section + "] " + key + " must contain only numbers");
      out.push_back(std::get<double>(item.v));
    }
    return out;
  }

  /// Applies a command-line override "section.key=value" on top of the file.
  void set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw SpecError("override must look like section.key=value: " + assignment);
    const std::string path = detail::trim(assignment.substr(0, eq));
    const auto dot = path.rfind('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 >= path.size())
      throw SpecError("override must look like section.key=value: " + assignment);
    data_[path.substr(0, dot)][path.substr(dot + 1)] =
        detail::parse_value(assignment.substr(eq + 1), 0);
  }

  const std::map<std::string, std::map<std::string, TomlValue>>& sections() const {
    return data_;
  }

 private:
  std::map<std::string, std::map<std::string, TomlValue>> data_;
};

}  // namespace gqncal
