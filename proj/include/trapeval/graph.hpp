#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "trapeval/blocks.hpp"
#include "trapeval/tape.hpp"
#include "trapeval/tensor.hpp"

namespace trapeval::graph {

enum class LayerKind { Input, Conv, C2f, SPPF, Upsample, Concat, GAM, Detect };

[[nodiscard]] std::string_view to_string(LayerKind kind) noexcept;
/// Throws ParseError for an unknown name.
[[nodiscard]] LayerKind parse_layer_kind(std::string_view name);

/// One layer.  Only the fields relevant to `kind` are used:
///   Input:    channels, height, width
///   Conv:     channels, kernel, stride
///   C2f:      channels, bottlenecks, shortcut
///   SPPF:     channels, pool_kernel
///   Upsample: factor
///   Concat:   inputs (two or more)
///   GAM:      reduction
///   Detect:   inputs (one per scale), num_classes
/// An empty `inputs` list means "the previous layer".
struct LayerSpec {
  std::string name;
  LayerKind kind{LayerKind::Conv};
  std::vector<std::string> inputs;
  int channels{0};
  int height{0};
  int width{0};
  int kernel{3};
  int stride{1};
  int bottlenecks{1};
  bool shortcut{true};
  int pool_kernel{5};
  int factor{2};
  int reduction{4};
  int num_classes{15};
  std::uint64_t seed{0};

  bool operator==(const LayerSpec&) const = default;
};

struct GraphSpec {
  std::vector<LayerSpec> layers;  ///< first layer is the Input

  /// Throws GraphError for an unknown name.
  [[nodiscard]] std::size_t index_of(std::string_view name) const;
  [[nodiscard]] bool contains(std::string_view name) const noexcept;
  bool operator==(const GraphSpec&) const = default;
};

/// Line-based text form: `name Kind key=value ...`, `#` starts a comment.
/// Keys: c, h, w, k, s, n, shortcut, pool, factor, r, nc, from, seed.
[[nodiscard]] GraphSpec parse_graph(std::string_view text);
[[nodiscard]] std::string write_graph(const GraphSpec& spec);

enum class Variant { Baseline, Improved };
/// How the improved variant fuses the layer-2 features.
///   P2Pan:   upsample to the layer-2 scale, concat, C2f, then a full extra
///            bottom-up path stage down to the other scales.
///   Minimal: the same P2 branch feeding only an extra detect scale.
enum class Wiring { P2Pan, Minimal };

[[nodiscard]] std::string_view to_string(Variant v) noexcept;
[[nodiscard]] Variant parse_variant(std::string_view name);
[[nodiscard]] std::string_view to_string(Wiring w) noexcept;
[[nodiscard]] Wiring parse_wiring(std::string_view name);

struct BuildOptions {
  int input_size{640};
  int input_channels{3};
  Wiring wiring{Wiring::P2Pan};
  std::uint64_t seed{0};
  int num_classes{15};
  std::array<int, 5> widths{32, 64, 128, 256, 512};  ///< strides 2, 4, 8, 16, 32
  std::array<int, 4> depths{1, 2, 2, 1};              ///< backbone C2f bottlenecks
  int neck_depth{1};
  int gam_reduction{4};
};

/// Throws ConfigError unless input_size is a positive multiple of 32.
[[nodiscard]] GraphSpec build_graph(Variant variant, const BuildOptions& options = {});

struct LayerShape {
  std::string name;
  LayerKind kind{LayerKind::Conv};
  std::vector<Shape3> inputs;
  Shape3 output;  ///< zero for Detect
  /// Internal shapes worth reporting: SPPF "concat", Detect "boxI"/"clsI".
  std::vector<std::pair<std::string, Shape3>> details;
};

/// Shape inference without evaluation.  Throws GraphError naming the
/// offending layer.
[[nodiscard]] std::vector<LayerShape> propagate_shapes(const GraphSpec& spec);

struct ShapeExpectation {
  std::string layer;
  std::string what;  ///< "input", "output" or a detail key
  Shape3 shape;
};

/// Published feature-map sizes of the 640-input backbone (layers 0-9), plus
/// GAM input/output for the improved variant.
[[nodiscard]] std::vector<ShapeExpectation> reference_shapes(Variant variant);

/// Mismatch descriptions; empty when everything agrees.
[[nodiscard]] std::vector<std::string> check_shapes(std::span<const LayerShape> shapes,
                                                    std::span<const ShapeExpectation> expected);

/// Human-readable table of the propagated shapes.
[[nodiscard]] std::string shape_table(std::span<const LayerShape> shapes);

using LayerParams =
    std::variant<std::monostate, blocks::ConvBlock, blocks::C2f, blocks::Sppf, blocks::Gam, blocks::Detect>;

/// A graph with instantiated weights.  Immutable once built; share it
/// between runs through shared_ptr.
class Model {
 public:
  explicit Model(GraphSpec spec);

  [[nodiscard]] const GraphSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] const std::vector<LayerShape>& shapes() const noexcept { return shapes_; }
  [[nodiscard]] const LayerParams& params(std::size_t layer) const { return params_.at(layer); }
  /// Mutable access for tests that pin weights before sharing the model.
  [[nodiscard]] LayerParams& params(std::size_t layer) { return params_.at(layer); }

 private:
  GraphSpec spec_;
  std::vector<LayerShape> shapes_;
  std::vector<LayerParams> params_;
};

struct GraphRun {
  std::shared_ptr<const Model> model;
  Tape tape;
  std::map<std::string, Tape::Node, std::less<>> layers;  ///< layer name -> output node
  std::map<std::string, Tape::Node, std::less<>> heads;   ///< "<detect>.boxI" / "<detect>.clsI"

  [[nodiscard]] const Tensor3& activation(std::string_view layer) const;
  [[nodiscard]] const Tensor3& head(std::string_view output) const;
};

/// Evaluates every layer in order.  A layer named in `overrides` takes the
/// given tensor as its output instead of computing it.  Throws GraphError on
/// a non-finite activation or an image of the wrong shape.
[[nodiscard]] GraphRun forward(std::shared_ptr<const Model> model, const Tensor3& image,
                               const std::map<std::string, Tensor3, std::less<>>& overrides = {});

/// weight * head(output)[channel, y, x]
struct ScoreTerm {
  std::string output;
  int channel{0};
  int y{0};
  int x{0};
  double weight{1.0};
};

[[nodiscard]] double score(const GraphRun& run, std::span<const ScoreTerm> terms);

/// Gradient of the weighted score with respect to the named layer's output.
/// Throws GraphError when the layer does not feed any selected output.
[[nodiscard]] Tensor3 backward_to_layer(const GraphRun& run, std::span<const ScoreTerm> terms,
                                        std::string_view layer);

}  // namespace trapeval::graph
