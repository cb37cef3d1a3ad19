#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/linalg.hpp"
#include "circuit_lens/patching.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace circuit_lens::io {

enum class GridView { raw, delta, normalized };

inline std::string to_string(GridView v) {
  switch (v) {
    case GridView::raw: return "raw";
    case GridView::delta: return "delta";
    case GridView::normalized: return "normalized";
  }
  return "unknown";
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// Blue (negative) to white (zero) to red (positive); t in [-1, 1].
inline std::string diverging_color(double t) {
  t = std::clamp(t, -1.0, 1.0);
  const auto mix = [](double a, double b, double u) { return static_cast<int>(std::lround(a + (b - a) * u)); };
  int r, g, b;
  if (t >= 0) {
    r = mix(255, 178, t);
    g = mix(255, 24, t);
    b = mix(255, 43, t);
  } else {
    r = mix(255, 33, -t);
    g = mix(255, 102, -t);
    b = mix(255, 172, -t);
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace detail

/// Standalone SVG heatmap. The colour scale is symmetric about zero with
/// limit max|value|; an all-zero grid renders white.
inline std::string heatmap_svg(const Matrix& values, const std::vector<std::string>& row_labels,
                               const std::vector<std::string>& col_labels, const std::string& title) {
  require(values.rows() > 0 && values.cols() > 0, ErrorCode::invalid_argument,
          "heatmap needs a non-empty grid");
  require(values.allFinite(), ErrorCode::non_finite, "heatmap values must be finite");
  require(row_labels.size() == static_cast<std::size_t>(values.rows()) &&
              col_labels.size() == static_cast<std::size_t>(values.cols()),
          ErrorCode::dimension_mismatch, "heatmap labels do not match the grid");

  const double limit = values.cwiseAbs().maxCoeff();
  const int cell = 36, left = 90, top = 40, bottom = 110, legend = 80;
  const int width = left + cell * static_cast<int>(values.cols()) + legend;
  const int height = top + cell * static_cast<int>(values.rows()) + bottom;
  const auto x0 = [&](Eigen::Index c) { return left + cell * static_cast<int>(c); };
  const auto y0 = [&](Eigen::Index r) { return top + cell * static_cast<int>(r); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
       std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<text x=\"" + std::to_string(left) + "\" y=\"20\" font-size=\"13\">" + detail::xml_escape(title) +
       "</text>\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      const double t = limit > 0.0 ? v / limit : 0.0;
      s += "<rect x=\"" + std::to_string(x0(c)) + "\" y=\"" + std::to_string(y0(r)) + "\" width=\"" +
           std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" +
           detail::diverging_color(t) + "\" stroke=\"#cccccc\"><title>" +
           detail::xml_escape(row_labels[static_cast<std::size_t>(r)] + ", " +
                              col_labels[static_cast<std::size_t>(c)]) +
           ": " + detail::fmt("%.6g", v) + "</title></rect>\n";
    }
  }
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    s += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + std::to_string(y0(r) + cell / 2 + 4) +
         "\" text-anchor=\"end\">" + detail::xml_escape(row_labels[static_cast<std::size_t>(r)]) + "</text>\n";
  const int label_y = top + cell * static_cast<int>(values.rows()) + 8;
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    const int x = x0(c) + cell / 2;
    s += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(label_y) +
         "\" text-anchor=\"end\" transform=\"rotate(-60 " + std::to_string(x) + " " + std::to_string(label_y) +
         ")\">" + detail::xml_escape(col_labels[static_cast<std::size_t>(c)]) + "</text>\n";
  }
  // Legend: five swatches from -limit to +limit.
  const int lx = left + cell * static_cast<int>(values.cols()) + 20;
  for (int i = 0; i < 5; ++i) {
    const double t = 1.0 - 0.5 * i;
    s += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(top + 18 * i) +
         "\" width=\"14\" height=\"14\" fill=\"" + detail::diverging_color(t) + "\" stroke=\"#cccccc\"/>\n";
    s += "<text x=\"" + std::to_string(lx + 18) + "\" y=\"" + std::to_string(top + 18 * i + 11) + "\">" +
         detail::fmt("%.3g", t * limit) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

inline const Matrix& grid_values(const PatchGrid& g, GridView view) {
  switch (view) {
    case GridView::raw: return g.values_raw;
    case GridView::delta: return g.values_delta;
    case GridView::normalized: return g.values_normalized;
  }
  return g.values_delta;
}

inline std::string heatmap_svg(const PatchGrid& g, GridView view = GridView::normalized) {
  return heatmap_svg(grid_values(g, view), g.row_labels, g.col_labels,
                     to_string(g.family) + " (" + to_string(view) + ")");
}

}  // namespace circuit_lens::io
