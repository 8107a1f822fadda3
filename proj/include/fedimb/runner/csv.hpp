#pragma once

#include "fedimb/error.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace fedimb::runner {

using Value = std::variant<long long, double, std::string>;
using ResultRow = std::vector<Value>;

struct Table {
  std::string name; // file stem
  std::vector<std::string> columns;
  std::vector<ResultRow> rows;

  std::size_t column(const std::string& col) const {
    const auto it = std::find(columns.begin(), columns.end(), col);
    if (it == columns.end()) throw Error("table " + name + ": no column " + col);
    return static_cast<std::size_t>(it - columns.begin());
  }
};

// Integers verbatim; reals with 6 significant digits keeping trailing zeros
// (0.25 -> "0.250000"); strings quoted only when they need it.
inline std::string format_value(const Value& v) {
  if (const auto* i = std::get_if<long long>(&v)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&v)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%#.6g", *d);
    return buf;
  }
  const auto& s = std::get<std::string>(v);
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline void write_csv(const Table& table, std::ostream& out) {
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    out << (c ? "," : "") << table.columns[c];
  out << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size())
      throw Error("emit_csv: row width " + std::to_string(row.size()) + " != " +
                  std::to_string(table.columns.size()) + " columns in " + table.name);
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_value(row[c]);
    out << '\n';
  }
}

inline std::string to_csv(const Table& table) {
  std::ostringstream out;
  write_csv(table, out);
  return out.str();
}

inline void emit_csv(const Table& table, const std::filesystem::path& path) {
  const std::string text = to_csv(table);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("emit_csv: cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("emit_csv: write failed for " + path.string());
}

// Numbers order before strings; numbers compare by value.
inline bool value_less(const Value& a, const Value& b) {
  auto as_num = [](const Value& v, double& out) {
    if (const auto* i = std::get_if<long long>(&v)) return out = static_cast<double>(*i), true;
    if (const auto* d = std::get_if<double>(&v)) return out = *d, true;
    return false;
  };
  double x = 0, y = 0;
  const bool nx = as_num(a, x), ny = as_num(b, y);
  if (nx && ny) return x < y;
  if (nx != ny) return nx;
  return std::get<std::string>(a) < std::get<std::string>(b);
}

// Stable sort of rows by the given key columns, in order.
inline void sort_rows(Table& table, const std::vector<std::string>& keys) {
  std::vector<std::size_t> idx;
  for (const auto& k : keys) idx.push_back(table.column(k));
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [&](const ResultRow& a, const ResultRow& b) {
                     for (auto i : idx) {
                       if (value_less(a[i], b[i])) return true;
                       if (value_less(b[i], a[i])) return false;
                     }
                     return false;
                   });
}

} // namespace fedimb::runner
