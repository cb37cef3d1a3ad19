#pragma once

#include "circuit_lens/patching.hpp"

#include <cstdio>
#include <string>
#include <vector>

namespace circuit_lens::io {

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Long format: one line per cell with all three views.
inline std::string grid_csv(const PatchGrid& g) {
  std::string s = "row,col,raw,delta,normalized\n";
  for (Eigen::Index r = 0; r < g.values_raw.rows(); ++r)
    for (Eigen::Index c = 0; c < g.values_raw.cols(); ++c)
      s += detail::csv_field(g.row_labels[static_cast<std::size_t>(r)]) + "," +
           detail::csv_field(g.col_labels[static_cast<std::size_t>(c)]) + "," +
           detail::csv_number(g.values_raw(r, c)) + "," + detail::csv_number(g.values_delta(r, c)) + "," +
           detail::csv_number(g.values_normalized(r, c)) + "\n";
  return s;
}

/// Two-column table of labelled values.
inline std::string table_csv(const std::string& key_header, const std::string& value_header,
                             const std::vector<std::string>& keys, const std::vector<double>& values) {
  std::string s = detail::csv_field(key_header) + "," + detail::csv_field(value_header) + "\n";
  for (std::size_t i = 0; i < keys.size() && i < values.size(); ++i)
    s += detail::csv_field(keys[i]) + "," + detail::csv_number(values[i]) + "\n";
  return s;
}

}  // namespace circuit_lens::io
