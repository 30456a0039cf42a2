#pragma once

#include <optional>
#include <string_view>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace trapeval::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct Marker {
  double x{0.0};
  std::string label;
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  /// Axis ranges; taken from the data (with a little headroom) when unset.
  std::optional<std::pair<double, double>> x_range;
  std::optional<std::pair<double, double>> y_range;
  std::vector<Marker> markers;  ///< dashed vertical lines
  int width{640};
  int height{420};
};

/// Standalone SVG document with axes, ticks, one polyline per series and a
/// legend.  Coordinates are printed with two decimals, so output is stable.
[[nodiscard]] std::string line_plot(const Plot& plot, std::span<const Series> series);

/// Escapes &, <, > and quotes for text nodes and attributes.
[[nodiscard]] std::string escape(std::string_view text);

}  // namespace trapeval::svg
