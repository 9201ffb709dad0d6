#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace clens {

// Shortest round-trippable decimal form; NaN becomes an empty field.
inline std::string format_number(double v) {
  if (std::isnan(v)) return {};
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::initializer_list<std::string_view> header) : out_(out) { row(header); }

  template <typename... Fields>
  void write(const Fields&... fields) {
    std::vector<std::string> cells{field(fields)...};
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }

 private:
  void row(std::initializer_list<std::string_view> cells) {
    bool first = true;
    for (std::string_view c : cells) {
      out_ << (first ? "" : ",") << c;
      first = false;
    }
    out_ << "\n";
  }
  static std::string field(double v) { return format_number(v); }
  static std::string field(int v) { return std::to_string(v); }
  static std::string field(long v) { return std::to_string(v); }
  static std::string field(unsigned long v) { return std::to_string(v); }
  static std::string field(std::string_view v) { return std::string(v); }
  static std::string field(const std::string& v) { return v; }
  static std::string field(const char* v) { return v; }

  std::ostream& out_;
};

// Splits one CSV line on commas (no quoting is ever emitted).
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw std::runtime_error("csv: no column '" + std::string(name) + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty file " + path.string());
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_csv_line(line));
    if (t.rows.back().size() != t.header.size()) throw std::runtime_error("csv: ragged row in " + path.string());
  }
  return t;
}

}  // namespace clens
