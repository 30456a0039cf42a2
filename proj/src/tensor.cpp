#include "trapeval/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "trapeval/error.hpp"

namespace trapeval {

std::string Shape3::to_string() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

Tensor3::Tensor3(int channels, int height, int width, double fill)
    : Tensor3(Shape3{channels, height, width}, fill) {}

Tensor3::Tensor3(Shape3 shape, double fill) : shape_(shape) {
  if (shape.channels < 0 || shape.height < 0 || shape.width < 0) {
    throw ShapeError("negative tensor dimension in " + shape.to_string());
  }
  values_.assign(shape.size(), fill);
}

Tensor3::Tensor3(Shape3 shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
  if (shape.channels < 0 || shape.height < 0 || shape.width < 0 || values_.size() != shape.size()) {
    throw ShapeError("tensor " + shape.to_string() + " needs " + std::to_string(shape.size()) +
                     " values, got " + std::to_string(values_.size()));
  }
}

bool Tensor3::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

int conv_output_dim(int input, const ShapeSpec& spec) {
  if (input < 1) throw ShapeError("input size must be >= 1");
  if (spec.kernel < 1 || spec.stride < 1 || spec.padding < 0) {
    throw ShapeError("kernel and stride must be >= 1 and padding >= 0");
  }
  const int span = input - spec.kernel + 2 * spec.padding;
  if (span < 0) {
    throw ShapeError("kernel " + std::to_string(spec.kernel) + " does not fit input " +
                     std::to_string(input) + " with padding " + std::to_string(spec.padding));
  }
  return span / spec.stride + 1;
}

ConvWeights::ConvWeights(int out, int in, int k)
    : out_channels(out),
      in_channels(in),
      kernel(k),
      weights(static_cast<std::size_t>(out) * in * k * k, 0.0),
      bias(static_cast<std::size_t>(out), 0.0) {
  if (out < 1 || in < 1 || k < 1) throw ShapeError("convolution sizes must be positive");
}

LinearWeights::LinearWeights(int out, int in)
    : out_features(out),
      in_features(in),
      weights(static_cast<std::size_t>(out) * in, 0.0),
      bias(static_cast<std::size_t>(out), 0.0) {
  if (out < 1 || in < 1) throw ShapeError("linear sizes must be positive");
}

WeightInit::WeightInit(std::uint64_t seed) : engine_(seed) {}

double WeightInit::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

void WeightInit::fill(ConvWeights& conv) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(conv.fan_in()));
  for (double& w : conv.weights) w = (2.0 * uniform() - 1.0) * bound;
  std::fill(conv.bias.begin(), conv.bias.end(), 0.0);
}

void WeightInit::fill(LinearWeights& linear) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(linear.in_features));
  for (double& w : linear.weights) w = (2.0 * uniform() - 1.0) * bound;
  std::fill(linear.bias.begin(), linear.bias.end(), 0.0);
}

double silu(double x) noexcept { return x * sigmoid(x); }

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

// Output columns ox with 0 <= ox * stride - padding + kx < width.
std::pair<int, int> valid_range(int out, int in, int stride, int padding, int k) {
  int lo = 0;
  while (lo < out && lo * stride - padding + k < 0) ++lo;
  int hi = out;
  while (hi > lo && (hi - 1) * stride - padding + k >= in) --hi;
  return {lo, hi};
}

}  // namespace

Tensor3 conv2d(const Tensor3& input, const ConvWeights& wt, int stride, int padding,
               std::string_view layer) {
  if (input.channels() != wt.in_channels) {
    throw ShapeError(std::string(layer) + ": expected " + std::to_string(wt.in_channels) +
                     " input channels, got " + std::to_string(input.channels()));
  }
  if (wt.weights.size() != static_cast<std::size_t>(wt.out_channels) * wt.fan_in() ||
      wt.bias.size() != static_cast<std::size_t>(wt.out_channels)) {
    throw ShapeError(std::string(layer) + ": weight count does not match C_out * C_in * k^2");
  }
  const ShapeSpec spec{wt.kernel, stride, padding};
  int oh = 0;
  int ow = 0;
  try {
    oh = conv_output_dim(input.height(), spec);
    ow = conv_output_dim(input.width(), spec);
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(layer) + ": " + e.what());
  }
  Tensor3 out(wt.out_channels, oh, ow);
  const int ih = input.height();
  const int iw = input.width();
  const int k = wt.kernel;

  std::vector<std::pair<int, int>> rows(static_cast<std::size_t>(k));
  std::vector<std::pair<int, int>> cols(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) {
    rows[static_cast<std::size_t>(t)] = valid_range(oh, ih, stride, padding, t);
    cols[static_cast<std::size_t>(t)] = valid_range(ow, iw, stride, padding, t);
  }

  for (int o = 0; o < wt.out_channels; ++o) {
    double* dst = out.data() + static_cast<std::size_t>(o) * out.plane();
    std::fill(dst, dst + out.plane(), wt.bias[static_cast<std::size_t>(o)]);
    for (int i = 0; i < wt.in_channels; ++i) {
      const double* src = input.data() + static_cast<std::size_t>(i) * input.plane();
      for (int ky = 0; ky < k; ++ky) {
        const auto [y0, y1] = rows[static_cast<std::size_t>(ky)];
        for (int kx = 0; kx < k; ++kx) {
          const double w = wt.w(o, i, ky, kx);
          if (w == 0.0) continue;
          const auto [x0, x1] = cols[static_cast<std::size_t>(kx)];
          for (int oy = y0; oy < y1; ++oy) {
            const double* srow = src + static_cast<std::size_t>(oy * stride - padding + ky) * iw;
            double* drow = dst + static_cast<std::size_t>(oy) * ow;
            if (stride == 1) {
              const double* s = srow - padding + kx;
              for (int ox = x0; ox < x1; ++ox) drow[ox] += w * s[ox];
            } else {
              for (int ox = x0; ox < x1; ++ox) drow[ox] += w * srow[ox * stride - padding + kx];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor3 conv2d(const Tensor3& input, const ConvWeights& weights, const ShapeSpec& spec,
               bool activation, std::string_view layer) {
  if (spec.kernel != weights.kernel) {
    throw ShapeError(std::string(layer) + ": spec kernel differs from weight kernel");
  }
  Tensor3 out = conv2d(input, weights, spec.stride, spec.padding, layer);
  if (activation) {
    for (double& v : out.values()) v = silu(v);
  }
  return out;
}

void conv2d_backward_input(const Tensor3& grad_output, const ConvWeights& wt, int stride,
                           int padding, Tensor3& grad_input) {
  const int oh = grad_output.height();
  const int ow = grad_output.width();
  const int ih = grad_input.height();
  const int iw = grad_input.width();
  const int k = wt.kernel;
  for (int o = 0; o < wt.out_channels; ++o) {
    const double* g = grad_output.data() + static_cast<std::size_t>(o) * grad_output.plane();
    for (int i = 0; i < wt.in_channels; ++i) {
      double* dst = grad_input.data() + static_cast<std::size_t>(i) * grad_input.plane();
      for (int ky = 0; ky < k; ++ky) {
        const auto [y0, y1] = valid_range(oh, ih, stride, padding, ky);
        for (int kx = 0; kx < k; ++kx) {
          const double w = wt.w(o, i, ky, kx);
          if (w == 0.0) continue;
          const auto [x0, x1] = valid_range(ow, iw, stride, padding, kx);
          for (int oy = y0; oy < y1; ++oy) {
            double* drow = dst + static_cast<std::size_t>(oy * stride - padding + ky) * iw;
            const double* grow = g + static_cast<std::size_t>(oy) * ow;
            for (int ox = x0; ox < x1; ++ox) drow[ox * stride - padding + kx] += w * grow[ox];
          }
        }
      }
    }
  }
}

std::vector<std::size_t> maxpool2d_argmax(const Tensor3& input, int kernel, int padding) {
  if (kernel < 1 || padding < 0 || padding >= kernel) {
    throw ShapeError("maxpool needs kernel >= 1 and 0 <= padding < kernel");
  }
  const int oh = conv_output_dim(input.height(), {kernel, 1, padding});
  const int ow = conv_output_dim(input.width(), {kernel, 1, padding});
  std::vector<std::size_t> arg(static_cast<std::size_t>(input.channels()) * oh * ow);
  std::size_t n = 0;
  for (int c = 0; c < input.channels(); ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t pick = std::numeric_limits<std::size_t>::max();
        for (int ky = 0; ky < kernel; ++ky) {
          const int y = oy - padding + ky;
          if (y < 0 || y >= input.height()) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int x = ox - padding + kx;
            if (x < 0 || x >= input.width()) continue;
            const std::size_t idx = input.index(c, y, x);
            if (pick == std::numeric_limits<std::size_t>::max() || input.values()[idx] > best) {
              best = input.values()[idx];
              pick = idx;
            }
          }
        }
        arg[n++] = pick;
      }
    }
  }
  return arg;
}

Tensor3 maxpool2d(const Tensor3& input, int kernel, int padding) {
  const int oh = conv_output_dim(input.height(), {kernel, 1, padding});
  const int ow = conv_output_dim(input.width(), {kernel, 1, padding});
  const std::vector<std::size_t> arg = maxpool2d_argmax(input, kernel, padding);
  Tensor3 out(input.channels(), oh, ow);
  for (std::size_t i = 0; i < arg.size(); ++i) out.values()[i] = input.values()[arg[i]];
  return out;
}

Tensor3 upsample_nearest(const Tensor3& input, int factor) {
  if (factor < 1) throw ShapeError("upsample factor must be >= 1");
  return resize_nearest(input, input.height() * factor, input.width() * factor);
}

Tensor3 resize_nearest(const Tensor3& input, int height, int width) {
  if (height < 1 || width < 1) throw ShapeError("resize target must be positive");
  if (input.height() < 1 || input.width() < 1) throw ShapeError("cannot resize an empty tensor");
  Tensor3 out(input.channels(), height, width);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < height; ++y) {
      const int sy = static_cast<int>(static_cast<long long>(y) * input.height() / height);
      for (int x = 0; x < width; ++x) {
        const int sx = static_cast<int>(static_cast<long long>(x) * input.width() / width);
        out.at(c, y, x) = input.at(c, sy, sx);
      }
    }
  }
  return out;
}

Tensor3 concat_channels(std::span<const Tensor3> inputs) {
  if (inputs.empty()) throw ShapeError("concat needs at least one input");
  const int h = inputs.front().height();
  const int w = inputs.front().width();
  int channels = 0;
  for (const Tensor3& t : inputs) {
    if (t.height() != h || t.width() != w) {
      throw ShapeError("concat inputs differ in spatial size: " + inputs.front().shape().to_string() +
                       " vs " + t.shape().to_string());
    }
    channels += t.channels();
  }
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(channels) * h * w);
  for (const Tensor3& t : inputs) values.insert(values.end(), t.values().begin(), t.values().end());
  return Tensor3(Shape3{channels, h, w}, std::move(values));
}

Tensor3 to_rows(const Tensor3& input) {
  const int n = input.height() * input.width();
  Tensor3 rows(1, n, input.channels());
  for (int c = 0; c < input.channels(); ++c) {
    for (int p = 0; p < n; ++p) {
      rows.values()[static_cast<std::size_t>(p) * input.channels() + c] =
          input.values()[static_cast<std::size_t>(c) * n + p];
    }
  }
  return rows;
}

Tensor3 from_rows(const Tensor3& rows, const Shape3& shape) {
  const int n = shape.height * shape.width;
  if (rows.channels() != 1 || rows.height() != n || rows.width() != shape.channels) {
    throw ShapeError("rows " + std::to_string(rows.height()) + "x" + std::to_string(rows.width()) +
                     " do not fold back into " + shape.to_string());
  }
  Tensor3 out(shape);
  for (int c = 0; c < shape.channels; ++c) {
    for (int p = 0; p < n; ++p) {
      out.values()[static_cast<std::size_t>(c) * n + p] =
          rows.values()[static_cast<std::size_t>(p) * shape.channels + c];
    }
  }
  return out;
}

Tensor3 linear_rows(const Tensor3& rows, const LinearWeights& lw) {
  if (rows.channels() != 1 || rows.width() != lw.in_features) {
    throw ShapeError("linear layer expects rows of " + std::to_string(lw.in_features) +
                     " features, got " + std::to_string(rows.width()));
  }
  Tensor3 out(1, rows.height(), lw.out_features);
  for (int r = 0; r < rows.height(); ++r) {
    const double* in = rows.data() + static_cast<std::size_t>(r) * lw.in_features;
    double* dst = out.data() + static_cast<std::size_t>(r) * lw.out_features;
    for (int o = 0; o < lw.out_features; ++o) {
      const double* w = lw.weights.data() + static_cast<std::size_t>(o) * lw.in_features;
      double acc = lw.bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < lw.in_features; ++i) acc += w[i] * in[i];
      dst[o] = acc;
    }
  }
  return out;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

std::uint32_t get_u32(std::string_view s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_tensor(const Tensor3& t) {
  std::string out = "TNSR";
  put_u32(out, static_cast<std::uint32_t>(t.channels()));
  put_u32(out, static_cast<std::uint32_t>(t.height()));
  put_u32(out, static_cast<std::uint32_t>(t.width()));
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFU));
  }
  return out;
}

Tensor3 decode_tensor(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 4) != "TNSR") throw ParseError("not a TNSR tensor dump");
  const Shape3 shape{static_cast<int>(get_u32(bytes, 4)), static_cast<int>(get_u32(bytes, 8)),
                     static_cast<int>(get_u32(bytes, 12))};
  if (bytes.size() != 16 + 8 * shape.size()) throw ParseError("tensor dump has the wrong length");
  std::vector<double> values(shape.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[16 + 8 * k + i])) << (8 * i);
    }
    values[k] = std::bit_cast<double>(bits);
  }
  return Tensor3(shape, std::move(values));
}

}  // namespace trapeval
