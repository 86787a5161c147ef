#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "splitconf/errors.hpp"

namespace splitconf {

// Shortest round-trip decimal form via std::to_chars: deterministic,
// locale-free, byte-identical across runs.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) {
    throw solver_error("format_double: to_chars failed");
  }
  return std::string(buf, res.ptr);
}

// Writes content to path atomically (temp file + rename).
inline void atomic_write_file(const std::string& path,
                              const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw invalid_input_error("cannot open for writing: " + tmp);
    }
    out.write(content.data(),
              static_cast<std::streamsize>(content.size()));
    if (!out) {
      throw invalid_input_error("write failed: " + tmp);
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw invalid_input_error("rename failed for: " + path);
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    throw invalid_input_error("CSV: missing column '" + name + "'");
  }

  bool has_column(const std::string& name) const {
    for (const auto& h : header) {
      if (h == name) return true;
    }
    return false;
  }

  double as_double(std::size_t row, std::size_t col) const {
    const std::string& cell = rows[row][col];
    try {
      return std::stod(cell);
    } catch (const std::exception&) {
      throw invalid_input_error("CSV: not a number: '" + cell + "'");
    }
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Minimal reader for the plain numeric CSVs this project emits and
// consumes: comma separation, first row is the header, '#'-prefixed lines
// are skipped.
inline CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      table.header = split_csv_line(line);
      have_header = true;
      continue;
    }
    auto cells = split_csv_line(line);
    if (cells.size() != table.header.size()) {
      throw invalid_input_error("CSV: ragged row: '" + line + "'");
    }
    table.rows.push_back(std::move(cells));
  }
  if (!have_header) throw invalid_input_error("CSV: empty input");
  return table;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input_error("cannot open CSV: " + path);
  return read_csv(in);
}

}  // namespace splitconf
