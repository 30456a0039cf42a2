#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "trapeval/graph.hpp"
#include "trapeval/tensor.hpp"

namespace trapeval::gradcam {

/// Values in [0, 1], row-major.
struct Heatmap {
  int height{0};
  int width{0};
  std::vector<double> values;

  [[nodiscard]] double at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
  /// Single-channel tensor view, for writing.
  [[nodiscard]] Tensor3 to_tensor() const;
};

/// Score used when the caller does not pick one: the largest logit of
/// `category` (or of any category when unset) over every cell of the class
/// outputs that `layer` feeds.
struct Selection {
  std::vector<graph::ScoreTerm> terms;
  int category{0};
  double logit{0.0};
};

[[nodiscard]] Selection default_selection(const graph::GraphRun& run, std::string_view layer,
                                          std::optional<int> category = std::nullopt);

/// Steps after the gradient: channel weights from the spatially averaged
/// gradient, weighted sum of the maps, ReLU, nearest resize to
/// height x width, division by the maximum.  An all-zero map stays zero.
[[nodiscard]] Heatmap heatmap_from(const Tensor3& activation, const Tensor3& gradient, int height, int width);

/// Full pipeline over a finished run; the heatmap has the input image size.
[[nodiscard]] Heatmap gradcam_heatmap(const graph::GraphRun& run, std::string_view layer,
                                      std::span<const graph::ScoreTerm> terms);

struct Rgb {
  std::uint8_t r{0};
  std::uint8_t g{0};
  std::uint8_t b{0};
  bool operator==(const Rgb&) const = default;
};

[[nodiscard]] const std::array<Rgb, 256>& viridis_table() noexcept;

/// Linear interpolation over the 256-entry table; input clamped to [0, 1].
[[nodiscard]] Rgb viridis_map(double value) noexcept;

/// (1 - alpha) * image + alpha * viridis(heat) per pixel, for a 3-channel
/// image with values in [0, 255].  Throws ShapeError on a size mismatch and
/// ConfigError for alpha outside [0, 1].
[[nodiscard]] Tensor3 overlay(const Tensor3& image, const Heatmap& heat, double alpha = 0.5);

/// Colour-mapped heatmap as a 3-channel [0, 255] image.
[[nodiscard]] Tensor3 colorize(const Heatmap& heat);

}  // namespace trapeval::gradcam
