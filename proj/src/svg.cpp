#include "trapeval/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "trapeval/error.hpp"

namespace trapeval::svg {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::pair<double, double> data_range(std::span<const Series> series, bool x_axis) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const Series& s : series) {
    for (const auto& p : s.points) {
      const double v = x_axis ? p.first : p.second;
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) return {0.0, 1.0};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {x_axis ? lo : lo - pad, x_axis ? hi : hi + pad};
}

}  // namespace

std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string line_plot(const Plot& plot, std::span<const Series> series) {
  if (plot.width < 200 || plot.height < 150) throw ConfigError("plot is too small");
  const auto [x0, x1] = plot.x_range.value_or(data_range(series, true));
  const auto [y0, y1] = plot.y_range.value_or(data_range(series, false));
  if (!(x1 > x0) || !(y1 > y0)) throw ConfigError("empty plot range");

  const double left = 70.0;
  const double right = plot.width - 150.0;
  const double top = 40.0;
  const double bottom = plot.height - 50.0;
  const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (right - left); };
  const auto py = [&](double y) { return bottom - (y - y0) / (y1 - y0) * (bottom - top); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << plot.width << "\" height=\"" << plot.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num((left + right) / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(plot.title) << "</text>\n";
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(right - left) << "\" height=\""
     << num(bottom - top) << "\" fill=\"none\" stroke=\"black\"/>\n";

  constexpr int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    const double xv = x0 + (x1 - x0) * i / kTicks;
    const double yv = y0 + (y1 - y0) * i / kTicks;
    os << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(px(xv)) << "\" y2=\""
       << num(bottom + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(bottom + 18) << "\" text-anchor=\"middle\">"
       << tick_label(xv) << "</text>\n";
    os << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(left) << "\" y2=\""
       << num(py(yv)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(left - 8) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
       << tick_label(yv) << "</text>\n";
  }
  os << "<text x=\"" << num((left + right) / 2) << "\" y=\"" << num(bottom + 38) << "\" text-anchor=\"middle\">"
     << escape(plot.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << num((top + bottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << num((top + bottom) / 2) << ")\">" << escape(plot.y_label) << "</text>\n";

  for (const Marker& m : plot.markers) {
    if (m.x < x0 || m.x > x1) continue;
    os << "<line x1=\"" << num(px(m.x)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(px(m.x)) << "\" y2=\""
       << num(bottom) << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    os << "<text x=\"" << num(px(m.x) + 4) << "\" y=\"" << num(top + 14) << "\">" << escape(m.label) << "</text>\n";
  }

  os << "<g>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* colour = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& [x, y] : series[k].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      const double cx = std::clamp(px(x), left, right);
      const double cy = std::clamp(py(y), top, bottom);
      os << (first ? "" : " ") << num(cx) << ',' << num(cy);
      first = false;
    }
    os << "\"/>\n";
    const double ly = top + 10.0 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << num(right + 10) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(right + 30) << "\" y2=\""
       << num(ly) << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(right + 35) << "\" y=\"" << num(ly + 4) << "\">" << escape(series[k].label)
       << "</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

}  // namespace trapeval::svg
