#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "trapeval/tape.hpp"
#include "trapeval/tensor.hpp"

namespace trapeval::blocks {

using Node = Tape::Node;

/// Convolution with "same"-style padding k/2, followed by SiLU unless
/// `activation` is off.
struct ConvBlock {
  ConvWeights weights;
  int stride{1};
  int padding{0};
  bool activation{true};

  static ConvBlock make(int in, int out, int kernel, int stride, WeightInit& init, bool activation = true);
  [[nodiscard]] Node apply(Tape& tape, Node x) const;
};

struct Bottleneck {
  ConvBlock cv1;
  ConvBlock cv2;
  bool shortcut{true};

  [[nodiscard]] Node apply(Tape& tape, Node x) const;
};

/// 1x1 conv to 2c channels, split in halves, a chain of n bottlenecks on the
/// second half, concatenation of every intermediate, 1x1 fuse conv.
struct C2f {
  ConvBlock cv1;
  std::vector<Bottleneck> bottlenecks;
  ConvBlock cv2;
  int hidden{0};  ///< c

  static C2f make(int in, int out, int n, bool shortcut, WeightInit& init);
  [[nodiscard]] Node apply(Tape& tape, Node x) const;
};

/// Three chained stride-1 max pools; the input and the three pooled maps are
/// concatenated (4C channels) and fused back to C by a 1x1 conv.
struct Sppf {
  int kernel{5};
  ConvBlock fuse;

  static Sppf make(int channels, int kernel, WeightInit& init);
  /// `concat`, when given, receives the node of the 4C concatenation.
  [[nodiscard]] Node apply(Tape& tape, Node x, Node* concat = nullptr) const;
};

struct MatrixShape {
  int rows{0};
  int cols{0};
  bool operator==(const MatrixShape&) const = default;
};

/// Shapes seen inside the channel attention MLP.
struct ChannelTrace {
  MatrixShape permuted;
  MatrixShape hidden;
  MatrixShape output;
};

/// Permute to (H*W) x C rows, Linear C -> C/4, ReLU, Linear C/4 -> C,
/// permute back, sigmoid gate.
struct GamChannel {
  LinearWeights fc1;
  LinearWeights fc2;

  static GamChannel make(int channels, WeightInit& init);
  [[nodiscard]] Node gate(Tape& tape, Node x, ChannelTrace* trace = nullptr) const;
  [[nodiscard]] Node apply(Tape& tape, Node x, ChannelTrace* trace = nullptr) const;
};

/// 7x7 conv C -> C/r, ReLU, 7x7 conv C/r -> C, sigmoid gate.
struct GamSpatial {
  ConvWeights conv1;
  ConvWeights conv2;
  int rate{4};

  static GamSpatial make(int channels, int rate, WeightInit& init);
  [[nodiscard]] Node gate(Tape& tape, Node x) const;
  [[nodiscard]] Node apply(Tape& tape, Node x) const;
};

struct Gam {
  GamChannel channel;
  GamSpatial spatial;

  static Gam make(int channels, int rate, WeightInit& init);
  [[nodiscard]] Node apply(Tape& tape, Node x, ChannelTrace* trace = nullptr) const;
};

/// Two 3x3 conv blocks and a plain 1x1 projection.
struct DetectBranch {
  ConvBlock a;
  ConvBlock b;
  ConvWeights out;

  [[nodiscard]] Node apply(Tape& tape, Node x) const;
};

/// Decoupled head stub: per scale a box branch (4 raw values per cell) and a
/// class branch (one logit per category per cell).
struct Detect {
  struct Scale {
    DetectBranch box;
    DetectBranch cls;
  };
  std::vector<Scale> scales;
  int num_classes{0};

  [[nodiscard]] static int box_hidden(int channels) noexcept;
  [[nodiscard]] static int cls_hidden(int channels, int num_classes) noexcept;
  static Detect make(const std::vector<int>& in_channels, int num_classes, WeightInit& init);
  /// (box node, class node) per scale.
  [[nodiscard]] std::vector<std::pair<Node, Node>> apply(Tape& tape, const std::vector<Node>& inputs) const;
};

// Direct evaluation helpers.

[[nodiscard]] Tensor3 c2f_forward(const Tensor3& input, const C2f& params);
[[nodiscard]] Tensor3 sppf_forward(const Tensor3& input, const Sppf& params);
[[nodiscard]] Tensor3 gam_channel_attention(const Tensor3& input, const GamChannel& params,
                                            ChannelTrace* trace = nullptr);
[[nodiscard]] Tensor3 gam_spatial_attention(const Tensor3& input, const GamSpatial& params);
[[nodiscard]] Tensor3 gam_forward(const Tensor3& input, const Gam& params);

}  // namespace trapeval::blocks
