#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ldpbench/error.hpp"

namespace ldpbench {

/// Shortest decimal string that parses back to exactly the same double.
/// Used for all persisted reals so output files are byte-stable and
/// recomputation checks can compare exactly.
inline std::string format_real(double value) {
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path);
  out << content;
}

inline bool file_exists(const std::string& path) {
  std::ifstream in(path);
  return in.good();
}

// Minimal RFC-4180-style CSV handling: quotes fields containing commas,
// quotes or newlines; doubles embedded quotes.

inline std::string csv_escape(std::string_view field) {
  const bool needs_quotes =
      field.find_first_of(",\"\n\r") != std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out;
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Splits one CSV record. The input line must not contain an unbalanced
/// quote; multi-line fields are handled by the row reader below.
inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

/// Reads CSV records from a stream, merging physical lines when a quoted
/// field spans newlines. Returns false at end of input.
inline bool csv_read_record(std::istream& in, std::string& record) {
  record.clear();
  std::string line;
  bool have_any = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (have_any) record.push_back('\n');
    record += line;
    have_any = true;
    std::size_t quotes = 0;
    for (char c : record)
      if (c == '"') ++quotes;
    if (quotes % 2 == 0) return true;
  }
  return have_any;
}

}  // namespace ldpbench
