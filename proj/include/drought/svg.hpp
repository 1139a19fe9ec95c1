#pragma once

// Minimal SVG scatter plots: points, two axes with min/max tick labels, a title.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <string>

#include "drought/common.hpp"

namespace drought::svg {

struct ScatterStyle {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 420;
  int margin = 60;
  double radius = 2.0;
  std::string color = "#1f77b4";
};

inline std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
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

inline void scatter(std::ostream& out, std::span<const double> xs, std::span<const double> ys,
                    const ScatterStyle& style) {
  if (xs.size() != ys.size()) throw ValidationError("scatter: x and y differ in length");
  double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  bool any = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) continue;
    if (!any) {
      x_lo = x_hi = xs[i];
      y_lo = y_hi = ys[i];
      any = true;
    }
    x_lo = std::min(x_lo, xs[i]);
    x_hi = std::max(x_hi, xs[i]);
    y_lo = std::min(y_lo, ys[i]);
    y_hi = std::max(y_hi, ys[i]);
  }
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) y_hi = y_lo + 1.0;

  const double m = style.margin;
  const double w = style.width - 2 * m;
  const double h = style.height - 2 * m;
  auto px = [&](double x) { return m + (x - x_lo) / (x_hi - x_lo) * w; };
  auto py = [&](double y) { return m + h - (y - y_lo) / (y_hi - y_lo) * h; };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\"" << style.height
      << "\" viewBox=\"0 0 " << style.width << ' ' << style.height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << style.width / 2 << "\" y=\"" << m / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" << escape(style.title) << "</text>\n";
  out << "<line x1=\"" << m << "\" y1=\"" << m + h << "\" x2=\"" << m + w << "\" y2=\"" << m + h
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << m + h << "\" stroke=\"black\"/>\n";
  if (y_lo < 0.0 && y_hi > 0.0) {
    out << "<line x1=\"" << m << "\" y1=\"" << format_fixed(py(0.0), 2) << "\" x2=\"" << m + w << "\" y2=\""
        << format_fixed(py(0.0), 2) << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
  }
  auto label = [&](double x, double y, std::string_view anchor, const std::string& text) {
    out << "<text x=\"" << format_fixed(x, 2) << "\" y=\"" << format_fixed(y, 2) << "\" text-anchor=\"" << anchor
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(text) << "</text>\n";
  };
  label(m, m + h + 16, "start", format_fixed(x_lo, 2));
  label(m + w, m + h + 16, "end", format_fixed(x_hi, 2));
  label(m - 6, m + h, "end", format_fixed(y_lo, 2));
  label(m - 6, m + 10, "end", format_fixed(y_hi, 2));
  label(m + w / 2, m + h + 36, "middle", style.x_label);
  out << "<text transform=\"translate(" << m / 3 << ',' << m + h / 2
      << ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
      << escape(style.y_label) << "</text>\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) continue;
    out << "<circle cx=\"" << format_fixed(px(xs[i]), 2) << "\" cy=\"" << format_fixed(py(ys[i]), 2) << "\" r=\""
        << style.radius << "\" fill=\"" << style.color << "\" fill-opacity=\"0.5\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace drought::svg
