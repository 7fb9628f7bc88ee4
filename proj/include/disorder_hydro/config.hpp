#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace disorder_hydro {

/// Allowed keys per section. The empty section name holds global keys.
using config_schema = std::map<std::string, std::set<std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// INI-style key = value text. Comments start with '#' or ';' at line start.
/// Unknown sections or keys, duplicates and malformed lines are rejected.
class config {
 public:
  using section_map = std::map<std::string, std::map<std::string, std::string>>;

  static config parse(std::istream& is, const config_schema& schema) {
    config c;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = detail::trim(line);
      const std::string where = "line " + std::to_string(lineno);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        require(t.back() == ']', error_kind::invalid_spec, where + ": malformed section header");
        section = detail::trim(t.substr(1, t.size() - 2));
        require(schema.count(section) && !section.empty(), error_kind::invalid_spec,
                where + ": unknown section [" + section + "]");
        require(!c.sections_.count(section), error_kind::invalid_spec,
                where + ": section [" + section + "] repeated");
        c.sections_[section];
        continue;
      }
      const auto eq = t.find('=');
      require(eq != std::string::npos, error_kind::invalid_spec, where + ": expected key = value");
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string value = detail::trim(t.substr(eq + 1));
      require(!key.empty(), error_kind::invalid_spec, where + ": empty key");
      const auto it = schema.find(section);
      require(it != schema.end() && it->second.count(key), error_kind::invalid_spec,
              where + ": unknown key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]"));
      auto& sec = c.sections_[section];
      require(!sec.count(key), error_kind::invalid_spec, where + ": duplicate key '" + key + "'");
      sec[key] = value;
    }
    return c;
  }

  static config parse_string(const std::string& text, const config_schema& schema) {
    std::istringstream is(text);
    return parse(is, schema);
  }

  static config load(const std::string& path, const config_schema& schema) {
    std::ifstream is(path);
    require(static_cast<bool>(is), error_kind::io, "cannot open config " + path);
    return parse(is, schema);
  }

  const section_map& sections() const noexcept { return sections_; }
  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }
  bool has(const std::string& s, const std::string& k) const {
    const auto it = sections_.find(s);
    return it != sections_.end() && it->second.count(k);
  }

  void set(const std::string& s, const std::string& k, const std::string& v) { sections_[s][k] = v; }

  std::string str(const std::string& s, const std::string& k, const std::string& def) const {
    return has(s, k) ? sections_.at(s).at(k) : def;
  }
  std::string str(const std::string& s, const std::string& k) const {
    require(has(s, k), error_kind::invalid_spec, "missing key '" + k + "' in [" + s + "]");
    return sections_.at(s).at(k);
  }

  double number(const std::string& s, const std::string& k) const { return to_number(str(s, k), k); }
  double number(const std::string& s, const std::string& k, double def) const {
    return has(s, k) ? number(s, k) : def;
  }

  std::int64_t integer(const std::string& s, const std::string& k) const {
    const double v = number(s, k);
    require(std::floor(v) == v && std::abs(v) < 9e15, error_kind::invalid_spec, "key '" + k + "' must be an integer");
    return static_cast<std::int64_t>(v);
  }
  std::int64_t integer(const std::string& s, const std::string& k, std::int64_t def) const {
    return has(s, k) ? integer(s, k) : def;
  }

  bool flag(const std::string& s, const std::string& k, bool def) const {
    if (!has(s, k)) return def;
    const auto v = str(s, k);
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    fail(error_kind::invalid_spec, "key '" + k + "' must be a boolean");
  }

  /// Comma or whitespace separated list; entries may be fractions like 1/128.
  std::vector<double> numbers(const std::string& s, const std::string& k) const {
    std::vector<double> out;
    for (const auto& w : words(str(s, k))) out.push_back(to_number(w, k));
    return out;
  }
  std::vector<double> numbers(const std::string& s, const std::string& k, std::vector<double> def) const {
    return has(s, k) ? numbers(s, k) : def;
  }

  std::vector<std::int64_t> integers(const std::string& s, const std::string& k, std::vector<std::int64_t> def = {}) const {
    if (!has(s, k)) return def;
    std::vector<std::int64_t> out;
    for (double v : numbers(s, k)) {
      require(std::floor(v) == v, error_kind::invalid_spec, "key '" + k + "' must list integers");
      out.push_back(static_cast<std::int64_t>(v));
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& s, const std::string& k, std::vector<std::string> def = {}) const {
    return has(s, k) ? words(str(s, k)) : def;
  }

  static std::vector<std::string> words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
      if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  static double to_number(const std::string& w, const std::string& key) {
    const auto slash = w.find('/');
    if (slash != std::string::npos)
      return to_number(w.substr(0, slash), key) / to_number(w.substr(slash + 1), key);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(w, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == w.size() && !w.empty(), error_kind::invalid_spec,
            "key '" + key + "': '" + w + "' is not a number");
    return v;
  }

 private:
  section_map sections_;
};

/// Arithmetic expressions in x, y, z (macroscopic coordinates) with + - * / ^,
/// pi, e and the usual one-argument functions plus min/max.
class expression {
 public:
  using fn = std::function<double(const std::vector<double>&)>;

  static fn compile(const std::string& text) {
    expression p(text);
    fn f = p.sum();
    p.skip();
    require(p.pos_ == p.s_.size(), error_kind::invalid_spec,
            "unexpected '" + p.s_.substr(p.pos_) + "' in expression");
    return f;
  }

 private:
  explicit expression(std::string s) : s_(std::move(s)) {}

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  fn sum() {
    fn l = product();
    for (;;) {
      if (eat('+')) {
        fn r = product();
        l = [l, r](const auto& v) { return l(v) + r(v); };
      } else if (eat('-')) {
        fn r = product();
        l = [l, r](const auto& v) { return l(v) - r(v); };
      } else {
        return l;
      }
    }
  }

  fn product() {
    fn l = unary();
    for (;;) {
      if (eat('*')) {
        fn r = unary();
        l = [l, r](const auto& v) { return l(v) * r(v); };
      } else if (eat('/')) {
        fn r = unary();
        l = [l, r](const auto& v) { return l(v) / r(v); };
      } else {
        return l;
      }
    }
  }

  fn unary() {
    if (eat('-')) {
      fn u = unary();
      return [u](const auto& v) { return -u(v); };
    }
    if (eat('+')) return unary();
    return power();
  }

  fn power() {
    fn base = atom();
    if (eat('^')) {
      fn ex = unary();
      return [base, ex](const auto& v) { return std::pow(base(v), ex(v)); };
    }
    return base;
  }

  fn atom() {
    skip();
    require(pos_ < s_.size(), error_kind::invalid_spec, "expression ends unexpectedly");
    if (eat('(')) {
      fn e = sum();
      require(eat(')'), error_kind::invalid_spec, "missing ')' in expression");
      return e;
    }
    const char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      const double v = std::stod(s_.substr(pos_), &used);
      pos_ += used;
      return [v](const auto&) { return v; };
    }
    require(std::isalpha(static_cast<unsigned char>(c)), error_kind::invalid_spec,
            std::string("unexpected '") + c + "' in expression");
    std::string name;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
      name += s_[pos_++];
    if (name == "pi") return [](const auto&) { return std::numbers::pi; };
    if (name == "e") return [](const auto&) { return std::numbers::e; };
    if (name == "x" || name == "theta" || name == "y" || name == "z") {
      const std::size_t i = name == "y" ? 1 : name == "z" ? 2 : 0;
      return [i, name](const std::vector<double>& v) {
        require(i < v.size(), error_kind::invalid_spec, "coordinate '" + name + "' exceeds the dimension");
        return v[i];
      };
    }
    static const std::map<std::string, double (*)(double)> unary_fns{
        {"sin", [](double a) { return std::sin(a); }},   {"cos", [](double a) { return std::cos(a); }},
        {"tan", [](double a) { return std::tan(a); }},   {"exp", [](double a) { return std::exp(a); }},
        {"log", [](double a) { return std::log(a); }},   {"sqrt", [](double a) { return std::sqrt(a); }},
        {"abs", [](double a) { return std::abs(a); }},   {"tanh", [](double a) { return std::tanh(a); }},
        {"floor", [](double a) { return std::floor(a); }}};
    require(eat('('), error_kind::invalid_spec, "unknown name '" + name + "' in expression");
    fn a = sum();
    if (name == "min" || name == "max") {
      require(eat(','), error_kind::invalid_spec, name + " takes two arguments");
      fn b = sum();
      require(eat(')'), error_kind::invalid_spec, "missing ')' in expression");
      if (name == "min") return [a, b](const auto& v) { return std::min(a(v), b(v)); };
      return [a, b](const auto& v) { return std::max(a(v), b(v)); };
    }
    require(eat(')'), error_kind::invalid_spec, "missing ')' in expression");
    const auto it = unary_fns.find(name);
    require(it != unary_fns.end(), error_kind::invalid_spec, "unknown function '" + name + "'");
    const auto f = it->second;
    return [f, a](const auto& v) { return f(a(v)); };
  }

  std::string s_;
  std::size_t pos_ = 0;
};

}  // namespace disorder_hydro
