#pragma once

// Static SVG line and bar charts for sweep and loss reports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "pgecap/tensor.hpp"

namespace pgecap {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline constexpr double kPlotW = 640, kPlotH = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  double lo, hi;
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

inline Axis padded_axis(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline void svg_frame(std::ofstream& out, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const Axis& ya) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPlotW << "\" height=\"" << kPlotH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kPlotW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
      << "</text>\n";
  const double x0 = kLeft, x1 = kPlotW - kRight, y0 = kPlotH - kBottom, y1 = kTop;
  out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = ya.lo + (ya.hi - ya.lo) * k / 4.0;
    const double py = ya.map(v, y0, y1);
    out << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
    out << "<line x1=\"" << x0 << "\" y1=\"" << py << "\" x2=\"" << x1 << "\" y2=\"" << py
        << "\" stroke=\"#ddd\"/>\n";
  }
  out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kPlotH - 12 << "\" text-anchor=\"middle\">"
      << escape_xml(xlabel) << "</text>\n";
  out << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (y0 + y1) / 2 << ")\">" << escape_xml(ylabel) << "</text>\n";
}

}  // namespace detail

inline void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                            const std::string& ylabel, const std::vector<Series>& series) {
  using namespace detail;
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("plot series '" + s.name + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  const Axis xa = padded_axis(xlo, xhi), ya = padded_axis(ylo, yhi);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  svg_frame(out, title, xlabel, ylabel, ya);
  const double x0 = kLeft, x1 = kPlotW - kRight, y0 = kPlotH - kBottom, y1 = kTop;
  for (int k = 0; k <= 4; ++k) {
    const double v = xa.lo + (xa.hi - xa.lo) * k / 4.0;
    out << "<text x=\"" << xa.map(v, x0, x1) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << num(v)
        << "</text>\n";
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* colour = kPalette[si % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      pts += num(xa.map(s.x[i], x0, x1)) + "," + num(ya.map(s.y[i], y0, y1)) + " ";
    }
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    if (s.x.size() <= 20) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        out << "<circle cx=\"" << num(xa.map(s.x[i], x0, x1)) << "\" cy=\"" << num(ya.map(s.y[i], y0, y1))
            << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
      }
    }
    const double ly = kTop + 18.0 * static_cast<double>(si);
    out << "<line x1=\"" << x1 + 12 << "\" y1=\"" << ly << "\" x2=\"" << x1 + 32 << "\" y2=\"" << ly
        << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << x1 + 38 << "\" y=\"" << ly + 4 << "\">" << escape_xml(s.name) << "</text>\n";
  }
  out << "</svg>\n";
}

inline void write_bar_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<std::string>& labels,
                           const std::vector<double>& values) {
  using namespace detail;
  if (labels.size() != values.size()) throw ShapeError("bar plot labels and values differ in length");
  double yhi = 0.0, ylo = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    yhi = std::max(yhi, v);
    ylo = std::min(ylo, v);
  }
  const Axis ya = padded_axis(ylo, yhi);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  svg_frame(out, title, xlabel, ylabel, ya);
  const double x0 = kLeft, x1 = kPlotW - kRight, y0 = kPlotH - kBottom;
  const double slot = (x1 - x0) / std::max<std::size_t>(1, values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double cx = x0 + slot * (static_cast<double>(i) + 0.5);
    if (std::isfinite(values[i])) {
      const double top = ya.map(values[i], y0, kTop), base = ya.map(0.0, y0, kTop);
      out << "<rect x=\"" << num(cx - 0.35 * slot) << "\" y=\"" << num(std::min(top, base)) << "\" width=\""
          << num(0.7 * slot) << "\" height=\"" << num(std::abs(base - top)) << "\" fill=\"" << kPalette[0]
          << "\"/>\n";
    }
    out << "<text x=\"" << num(cx) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << escape_xml(labels[i])
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace pgecap
