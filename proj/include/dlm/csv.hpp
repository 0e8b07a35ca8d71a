#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dlm/errors.hpp"

namespace dlm::csv {

// Every CSV we emit starts with "# schema: <name>/<version>" and then the
// column header.
inline constexpr int kSchemaVersion = 1;

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

class Writer {
 public:
  Writer(const std::string& path, std::string_view schema, std::string_view header)
      : os_(path, std::ios::binary), path_(path) {
    if (!os_) throw IoError("cannot open '" + path + "' for writing");
    os_ << "# schema: " << schema << '/' << kSchemaVersion << '\n' << header << '\n';
  }

  template <class... Cols>
  void row(const Cols&... cols) {
    bool first = true;
    ((put(cols, first)), ...);
    os_ << '\n';
    if (!os_) throw IoError("write failed for '" + path_ + "'");
  }

 private:
  template <class T>
  void put(const T& v, bool& first) {
    if (!first) os_ << ',';
    first = false;
    if constexpr (std::is_floating_point_v<T>)
      os_ << format_real(static_cast<double>(v));
    else
      os_ << v;
  }

  std::ofstream os_;
  std::string path_;
};

// Reads a CSV written by Writer: skips '#' lines, returns the header and rows
// split on commas.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("csv: missing column '" + std::string(name) + "'");
  }
};

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline Table read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      t.header = split(line);
      have_header = true;
    } else {
      auto cells = split(line);
      if (cells.size() != t.header.size()) throw FormatError("csv: ragged row in '" + path + "'");
      t.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw FormatError("csv: no header in '" + path + "'");
  return t;
}

}  // namespace dlm::csv
