#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trapeval {

/// Channels x height x width.  Printed as "HxWxC" to match the usual
/// feature-map listings.
struct Shape3 {
  int channels{0};
  int height{0};
  int width{0};

  [[nodiscard]] std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  [[nodiscard]] std::string to_string() const;
  bool operator==(const Shape3&) const = default;
};

/// Dense C x H x W grid of doubles.  Layout is channel-major and row-major
/// within a channel: element (c, y, x) sits at (c * H + y) * W + x.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int channels, int height, int width, double fill = 0.0);
  explicit Tensor3(Shape3 shape, double fill = 0.0);
  /// Throws ShapeError when values.size() != C * H * W.
  Tensor3(Shape3 shape, std::vector<double> values);

  [[nodiscard]] const Shape3& shape() const noexcept { return shape_; }
  [[nodiscard]] int channels() const noexcept { return shape_.channels; }
  [[nodiscard]] int height() const noexcept { return shape_.height; }
  [[nodiscard]] int width() const noexcept { return shape_.width; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] std::size_t plane() const noexcept {
    return static_cast<std::size_t>(shape_.height) * static_cast<std::size_t>(shape_.width);
  }

  [[nodiscard]] double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
  [[nodiscard]] double at(int c, int y, int x) const { return values_[index(c, y, x)]; }
  [[nodiscard]] std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(shape_.height) +
            static_cast<std::size_t>(y)) * static_cast<std::size_t>(shape_.width) +
           static_cast<std::size_t>(x);
  }

  [[nodiscard]] std::vector<double>& values() noexcept { return values_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }
  [[nodiscard]] double* data() noexcept { return values_.data(); }
  [[nodiscard]] const double* data() const noexcept { return values_.data(); }

  [[nodiscard]] bool all_finite() const noexcept;
  bool operator==(const Tensor3&) const = default;

 private:
  Shape3 shape_{};
  std::vector<double> values_;
};

struct ShapeSpec {
  int kernel{3};
  int stride{1};
  int padding{0};
};

/// floor((input - kernel + 2 * padding) / stride) + 1.  Throws ShapeError
/// when the result is not positive or the spec is malformed.
[[nodiscard]] int conv_output_dim(int input, const ShapeSpec& spec);

/// Square-kernel convolution weights, laid out [out][in][ky][kx].
struct ConvWeights {
  int out_channels{0};
  int in_channels{0};
  int kernel{1};
  std::vector<double> weights;
  std::vector<double> bias;  ///< one per output channel

  ConvWeights() = default;
  ConvWeights(int out_channels, int in_channels, int kernel);
  [[nodiscard]] double& w(int o, int i, int ky, int kx) {
    return weights[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx];
  }
  [[nodiscard]] double w(int o, int i, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx];
  }
  [[nodiscard]] int fan_in() const noexcept { return in_channels * kernel * kernel; }
};

/// Fully connected layer, weights laid out [out][in].
struct LinearWeights {
  int out_features{0};
  int in_features{0};
  std::vector<double> weights;
  std::vector<double> bias;

  LinearWeights() = default;
  LinearWeights(int out_features, int in_features);
};

/// Deterministic weight source: mt19937_64 with 53-bit uniforms, values
/// uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
class WeightInit {
 public:
  explicit WeightInit(std::uint64_t seed);
  void fill(ConvWeights& conv);
  void fill(LinearWeights& linear);
  /// Uniform in [0, 1).
  double uniform();

 private:
  std::mt19937_64 engine_;
};

// Raw kernels.  All take and return channel-major tensors.

[[nodiscard]] double silu(double x) noexcept;
[[nodiscard]] double sigmoid(double x) noexcept;

/// Convolution without activation.  `layer` names the caller in errors.
[[nodiscard]] Tensor3 conv2d(const Tensor3& input, const ConvWeights& weights, int stride,
                             int padding, std::string_view layer = "conv");
/// Convolution followed by SiLU when `activation` is set.
[[nodiscard]] Tensor3 conv2d(const Tensor3& input, const ConvWeights& weights,
                             const ShapeSpec& spec, bool activation,
                             std::string_view layer = "conv");
/// Accumulates d(input) for a convolution given d(output).
void conv2d_backward_input(const Tensor3& grad_output, const ConvWeights& weights, int stride,
                           int padding, Tensor3& grad_input);

/// Stride-1 max pooling; padding cells count as -infinity.
[[nodiscard]] Tensor3 maxpool2d(const Tensor3& input, int kernel, int padding);
/// Flat index of the first maximum in each window, in scan order.
[[nodiscard]] std::vector<std::size_t> maxpool2d_argmax(const Tensor3& input, int kernel,
                                                        int padding);

[[nodiscard]] Tensor3 upsample_nearest(const Tensor3& input, int factor);
/// Nearest-neighbour resize to an arbitrary size.
[[nodiscard]] Tensor3 resize_nearest(const Tensor3& input, int height, int width);

/// Throws ShapeError when spatial sizes differ or the list is empty.
[[nodiscard]] Tensor3 concat_channels(std::span<const Tensor3> inputs);

/// (C, H, W) -> (1, H*W, C): one row per spatial position.
[[nodiscard]] Tensor3 to_rows(const Tensor3& input);
/// Inverse of to_rows for the given original shape.
[[nodiscard]] Tensor3 from_rows(const Tensor3& rows, const Shape3& shape);
/// Applies a linear layer to each row of a (1, N, in) tensor.
[[nodiscard]] Tensor3 linear_rows(const Tensor3& rows, const LinearWeights& weights);

/// Binary dump: "TNSR", C, H, W as little-endian uint32, then values as
/// little-endian IEEE doubles in channel-major order.
[[nodiscard]] std::string encode_tensor(const Tensor3& t);
[[nodiscard]] Tensor3 decode_tensor(std::string_view bytes);

}  // namespace trapeval
