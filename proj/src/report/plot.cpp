#include "clens/report/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

namespace clens {

namespace {

constexpr int kWidth = 560;
constexpr int kHeight = 360;
constexpr int kLeft = 64, kRight = 150, kTop = 40, kBottom = 48;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

bool parse(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

void header(std::ostringstream& svg, const std::string& title) {
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">" << escape(title)
      << "</text>\n";
}

}  // namespace

std::string no_data_panel(const std::string& title) {
  std::ostringstream svg;
  header(svg, title);
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
      << kHeight - kTop - kBottom << "\" fill=\"#f4f4f4\" stroke=\"#999999\"/>\n"
      << "<text class=\"no-data\" x=\"" << kLeft + (kWidth - kLeft - kRight) / 2 << "\" y=\"" << kHeight / 2
      << "\" font-size=\"16\" text-anchor=\"middle\" fill=\"#666666\">no data</text>\n</svg>\n";
  return svg.str();
}

std::string line_chart(const Axes& axes, const std::vector<Series>& series) {
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  std::size_t n_points = 0;
  for (const Series& s : series) {
    for (const auto& [xs, ys] : s.points) {
      double x, y;
      if (!parse(xs, x) || !parse(ys, y)) continue;
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
      ++n_points;
    }
  }
  if (n_points == 0) return no_data_panel(axes.title);
  if (x_hi == x_lo) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  if (y_hi == y_lo) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return kTop + (y_hi - y) / (y_hi - y_lo) * ph; };

  std::ostringstream svg;
  header(svg, axes.title);
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_lo + (x_hi - x_lo) * i / 4.0, yv = y_lo + (y_hi - y_lo) * i / 4.0;
    svg << "<text x=\"" << fixed(px(xv)) << "\" y=\"" << kHeight - kBottom + 16
        << "\" font-size=\"10\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(py(yv) + 3) << "\" font-size=\"10\" text-anchor=\"end\">"
        << tick(yv) << "</text>\n";
    svg << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << fixed(py(yv)) << "\" y2=\""
        << fixed(py(yv)) << "\" stroke=\"#e5e5e5\"/>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10 << "\" font-size=\"12\" text-anchor=\"middle\">"
      << escape(axes.x_label) << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kTop + ph / 2 << ")\">" << escape(axes.y_label) << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    std::string path;
    std::ostringstream markers;
    for (const auto& [xs, ys] : s.points) {
      double x, y;
      if (!parse(xs, x) || !parse(ys, y)) continue;
      path += (path.empty() ? "M" : " L") + fixed(px(x)) + " " + fixed(py(y));
      markers << "<circle cx=\"" << fixed(px(x)) << "\" cy=\"" << fixed(py(y)) << "\" r=\"3\" fill=\"" << color
              << "\" data-series=\"" << escape(s.label) << "\" data-x=\"" << escape(xs) << "\" data-y=\"" << escape(ys)
              << "\"/>\n";
    }
    if (!path.empty()) {
      svg << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    }
    svg << markers.str();
    const int ly = kTop + 12 + static_cast<int>(i) * 16;
    svg << "<rect x=\"" << kWidth - kRight + 10 << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\"" << color
        << "\"/>\n<text x=\"" << kWidth - kRight + 24 << "\" y=\"" << ly << "\" font-size=\"11\">" << escape(s.label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string heatmap_chart(const Axes& axes, int rows, int cols, const std::vector<std::string>& cells) {
  if (rows <= 0 || cols <= 0 || cells.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    return no_data_panel(axes.title);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const std::string& c : cells) {
    double v;
    if (parse(c, v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) return no_data_panel(axes.title);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double cw = pw / cols, ch = ph / rows;
  std::ostringstream svg;
  header(svg, axes.title);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::string& text = cells[static_cast<std::size_t>(r * cols + c)];
      double v = 0.0;
      const bool numeric = parse(text, v);
      std::string fill = "#ffffff";
      if (numeric) {
        // Diverging blue (low) to red (high) around the midpoint of the range.
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        const int red = static_cast<int>(std::lround(t < 0.5 ? 255 * (2 * t) : 255));
        const int blue = static_cast<int>(std::lround(t > 0.5 ? 255 * (2 - 2 * t) : 255));
        const int green = std::min(red, blue);
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", red, green, blue);
        fill = buf;
      }
      const double x = kLeft + c * cw, y = kTop + r * ch;
      svg << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" width=\"" << fixed(cw) << "\" height=\"" << fixed(ch)
          << "\" fill=\"" << fill << "\" stroke=\"#ffffff\" data-row=\"" << r << "\" data-col=\"" << c
          << "\" data-value=\"" << escape(text) << "\"/>\n";
      svg << "<text x=\"" << fixed(x + cw / 2) << "\" y=\"" << fixed(y + ch / 2 + 4)
          << "\" font-size=\"10\" text-anchor=\"middle\">" << (numeric ? tick(v) : "") << "</text>\n";
    }
  }
  for (int r = 0; r < rows; ++r) {
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(kTop + (r + 0.5) * ch + 4)
        << "\" font-size=\"10\" text-anchor=\"end\">" << r << "</text>\n";
  }
  for (int c = 0; c < cols; ++c) {
    svg << "<text x=\"" << fixed(kLeft + (c + 0.5) * cw) << "\" y=\"" << kHeight - kBottom + 16
        << "\" font-size=\"10\" text-anchor=\"middle\">" << c << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10 << "\" font-size=\"12\" text-anchor=\"middle\">"
      << escape(axes.x_label) << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kTop + ph / 2 << ")\">" << escape(axes.y_label) << "</text>\n";
  svg << "<text x=\"" << kWidth - kRight + 10 << "\" y=\"" << kTop + 12 << "\" font-size=\"11\">low " << tick(lo)
      << "</text>\n<text x=\"" << kWidth - kRight + 10 << "\" y=\"" << kTop + 28 << "\" font-size=\"11\">high "
      << tick(hi) << "</text>\n</svg>\n";
  return svg.str();
}

}  // namespace clens
