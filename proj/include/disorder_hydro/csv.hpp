#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace disorder_hydro::csv {

/// Shortest round-trip decimal form ("%.17g" trimmed via to_chars).
inline std::string format(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format(long long v) { return std::to_string(v); }
inline std::string format(long v) { return std::to_string(v); }
inline std::string format(int v) { return std::to_string(v); }
inline std::string format(unsigned long v) { return std::to_string(v); }
inline std::string format(unsigned long long v) { return std::to_string(v); }
inline std::string format(const std::string& v) { return v; }
inline std::string format(const char* v) { return v; }

class writer {
 public:
  explicit writer(std::ostream& os) : os_(os) {}

  template <class... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((os_ << (first ? "" : ",") << format(cells), first = false), ...);
    os_ << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
  }

 private:
  std::ostream& os_;
};

struct table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

inline table read(std::istream& is) {
  table t;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    if (!have_header) {
      t.header = split(line);
      have_header = true;
    } else {
      t.rows.push_back(split(line));
    }
  }
  return t;
}

inline table read_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), error_kind::io, "cannot open " + path);
  return read(in);
}

inline double to_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    require(pos == s.size(), error_kind::invalid_spec, "bad number '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    fail(error_kind::invalid_spec, "bad number '" + s + "'");
  } catch (const std::out_of_range&) {
    fail(error_kind::invalid_spec, "number out of range '" + s + "'");
  }
}

}  // namespace disorder_hydro::csv
