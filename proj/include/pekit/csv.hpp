#pragma once

// Minimal CSV emission for experiment artifacts: a header row, records built
// cell by cell, and an atomic write to disk.  Doubles are printed with %.17g
// so a value survives a round trip through the file exactly and re-runs of a
// deterministic experiment produce byte-identical artifacts.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/io.hpp"

namespace pekit {

inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
    if (header_.empty()) throw std::invalid_argument("CsvTable: empty header");
  }

  CsvTable& begin_row() {
    rows_.emplace_back();
    return *this;
  }

  CsvTable& cell(const std::string& v) {
    current().push_back(v);
    return *this;
  }

  CsvTable& cell(std::int64_t v) { return cell(std::to_string(v)); }
  CsvTable& cell(double v) { return cell(csv_double(v)); }
  CsvTable& cell(bool v) { return cell(std::string(v ? "true" : "false")); }

  std::size_t row_count() const { return rows_.size(); }

  std::string to_string() const {
    std::string out = join(header_);
    for (const auto& row : rows_) {
      if (row.size() != header_.size()) {
        throw std::logic_error("CsvTable: row width " + std::to_string(row.size()) +
                               " does not match header width " +
                               std::to_string(header_.size()));
      }
      out += join(row);
    }
    return out;
  }

  void write(const std::filesystem::path& path) const { atomic_write_file(path, to_string()); }

 private:
  std::vector<std::string>& current() {
    if (rows_.empty()) throw std::logic_error("CsvTable: cell() before begin_row()");
    return rows_.back();
  }

  static std::string join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) line += ",";
      line += cells[i];
    }
    line += "\n";
    return line;
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace pekit
