#include "trapeval/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trapeval/error.hpp"

namespace trapeval::gradcam {

Tensor3 Heatmap::to_tensor() const { return Tensor3(Shape3{1, height, width}, values); }

Selection default_selection(const graph::GraphRun& run, std::string_view layer, std::optional<int> category) {
  const auto target = run.layers.find(layer);
  if (target == run.layers.end()) throw GraphError("no recorded activation for layer '" + std::string(layer) + "'");

  Selection best;
  bool found = false;
  bool any_scale = false;
  for (const auto& [name, node] : run.heads) {
    const auto dot = name.rfind('.');
    if (dot == std::string::npos || name.compare(dot + 1, 3, "cls") != 0) continue;
    if (!run.tape.is_ancestor(target->second, node)) continue;
    any_scale = true;
    const Tensor3& logits = run.tape.value(node);
    if (category && (*category < 0 || *category >= logits.channels())) {
      throw ConfigError("category index " + std::to_string(*category) + " outside [0, " +
                        std::to_string(logits.channels()) + ")");
    }
    const int c0 = category ? *category : 0;
    const int c1 = category ? *category + 1 : logits.channels();
    for (int c = c0; c < c1; ++c)
      for (int y = 0; y < logits.height(); ++y)
        for (int x = 0; x < logits.width(); ++x) {
          const double v = logits.at(c, y, x);
          if (!found || v > best.logit) {
            found = true;
            best.logit = v;
            best.category = c;
            best.terms = {{name, c, y, x, 1.0}};
          }
        }
  }
  if (!any_scale) throw GraphError("layer '" + std::string(layer) + "' does not feed any class output");
  return best;
}

Heatmap heatmap_from(const Tensor3& activation, const Tensor3& gradient, int height, int width) {
  if (activation.shape() != gradient.shape()) {
    throw ShapeError("gradient " + gradient.shape().to_string() + " does not match activation " +
                     activation.shape().to_string());
  }
  if (height < 1 || width < 1) throw ShapeError("heatmap size must be positive");
  const std::size_t plane = activation.plane();
  Tensor3 cam(1, activation.height(), activation.width());
  for (int c = 0; c < activation.channels(); ++c) {
    const double* g = gradient.data() + static_cast<std::size_t>(c) * plane;
    double weight = 0.0;
    for (std::size_t i = 0; i < plane; ++i) weight += g[i];
    weight /= static_cast<double>(plane);
    if (weight == 0.0) continue;
    const double* a = activation.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) cam.values()[i] += weight * a[i];
  }
  for (double& v : cam.values()) v = std::max(v, 0.0);
  const Tensor3 up = resize_nearest(cam, height, width);
  Heatmap heat{height, width, up.values()};
  const double peak = *std::max_element(heat.values.begin(), heat.values.end());
  if (peak > 0.0) {
    for (double& v : heat.values) v = std::min(v / peak, 1.0);
  }
  return heat;
}

Heatmap gradcam_heatmap(const graph::GraphRun& run, std::string_view layer, std::span<const graph::ScoreTerm> terms) {
  const Tensor3 grad = graph::backward_to_layer(run, terms, layer);
  const Shape3 input = run.model->shapes().front().output;
  return heatmap_from(run.activation(layer), grad, input.height, input.width);
}

Rgb viridis_map(double value) noexcept {
  const auto& table = viridis_table();
  if (!(value > 0.0)) return table.front();
  if (value >= 1.0) return table.back();
  const double pos = value * 255.0;
  const auto i = static_cast<std::size_t>(pos);
  const double f = pos - static_cast<double>(i);
  const Rgb& a = table[i];
  const Rgb& b = table[std::min<std::size_t>(i + 1, 255)];
  auto mix = [f](std::uint8_t u, std::uint8_t v) {
    return static_cast<std::uint8_t>(std::lround(static_cast<double>(u) + f * (static_cast<double>(v) - u)));
  };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

Tensor3 colorize(const Heatmap& heat) {
  Tensor3 out(3, heat.height, heat.width);
  for (int y = 0; y < heat.height; ++y)
    for (int x = 0; x < heat.width; ++x) {
      const Rgb c = viridis_map(heat.at(y, x));
      out.at(0, y, x) = c.r;
      out.at(1, y, x) = c.g;
      out.at(2, y, x) = c.b;
    }
  return out;
}

Tensor3 overlay(const Tensor3& image, const Heatmap& heat, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("overlay alpha must lie in [0, 1]");
  if (image.channels() != 3 || image.height() != heat.height || image.width() != heat.width) {
    throw ShapeError("overlay needs a 3-channel image of the heatmap size: image " + image.shape().to_string() +
                     ", heatmap " + std::to_string(heat.height) + "x" + std::to_string(heat.width));
  }
  const Tensor3 colors = colorize(heat);
  Tensor3 out(image.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values()[i] = (1.0 - alpha) * image.values()[i] + alpha * colors.values()[i];
  }
  return out;
}

}  // namespace trapeval::gradcam
