#include "trapeval/blocks.hpp"

#include <algorithm>

#include "trapeval/error.hpp"

namespace trapeval::blocks {

ConvBlock ConvBlock::make(int in, int out, int kernel, int stride, WeightInit& init, bool activation) {
  ConvBlock b;
  b.weights = ConvWeights(out, in, kernel);
  init.fill(b.weights);
  b.stride = stride;
  b.padding = kernel / 2;
  b.activation = activation;
  return b;
}

Node ConvBlock::apply(Tape& tape, Node x) const {
  const Node y = tape.conv(x, weights, stride, padding);
  return activation ? tape.silu(y) : y;
}

Node Bottleneck::apply(Tape& tape, Node x) const {
  const Node y = cv2.apply(tape, cv1.apply(tape, x));
  return shortcut ? tape.add(x, y) : y;
}

C2f C2f::make(int in, int out, int n, bool shortcut, WeightInit& init) {
  if (out < 2 || out % 2 != 0) throw ShapeError("C2f output channels must be even, got " + std::to_string(out));
  if (n < 0) throw ShapeError("C2f bottleneck count must be >= 0");
  C2f block;
  block.hidden = out / 2;
  const int c = block.hidden;
  block.cv1 = ConvBlock::make(in, 2 * c, 1, 1, init);
  for (int i = 0; i < n; ++i) {
    Bottleneck b;
    b.cv1 = ConvBlock::make(c, c, 3, 1, init);
    b.cv2 = ConvBlock::make(c, c, 3, 1, init);
    b.shortcut = shortcut;
    block.bottlenecks.push_back(std::move(b));
  }
  block.cv2 = ConvBlock::make((2 + n) * c, out, 1, 1, init);
  return block;
}

Node C2f::apply(Tape& tape, Node x) const {
  const Node y = cv1.apply(tape, x);
  std::vector<Node> parts{tape.slice(y, 0, hidden), tape.slice(y, hidden, 2 * hidden)};
  for (const Bottleneck& b : bottlenecks) parts.push_back(b.apply(tape, parts.back()));
  return cv2.apply(tape, tape.concat(parts));
}

Sppf Sppf::make(int channels, int kernel, WeightInit& init) {
  if (kernel < 1 || kernel % 2 == 0) throw ShapeError("SPPF pool kernel must be odd");
  Sppf s;
  s.kernel = kernel;
  s.fuse = ConvBlock::make(4 * channels, channels, 1, 1, init);
  return s;
}

Node Sppf::apply(Tape& tape, Node x, Node* concat) const {
  std::vector<Node> parts{x};
  for (int i = 0; i < 3; ++i) parts.push_back(tape.maxpool(parts.back(), kernel, kernel / 2));
  const Node cat = tape.concat(parts);
  if (concat != nullptr) *concat = cat;
  return fuse.apply(tape, cat);
}

GamChannel GamChannel::make(int channels, WeightInit& init) {
  if (channels < 4 || channels % 4 != 0) {
    throw ShapeError("GAM channel attention needs C divisible by 4, got " + std::to_string(channels));
  }
  GamChannel g;
  g.fc1 = LinearWeights(channels / 4, channels);
  g.fc2 = LinearWeights(channels, channels / 4);
  init.fill(g.fc1);
  init.fill(g.fc2);
  return g;
}

Node GamChannel::gate(Tape& tape, Node x, ChannelTrace* trace) const {
  const Shape3 shape = tape.value(x).shape();
  if (shape.channels != fc1.in_features) {
    throw ShapeError("GAM channel attention built for " + std::to_string(fc1.in_features) +
                     " channels, got " + std::to_string(shape.channels));
  }
  const Node rows = tape.to_rows(x);
  const Node hidden = tape.linear(rows, fc1);
  const Node out = tape.linear(tape.relu(hidden), fc2);
  if (trace != nullptr) {
    auto dims = [&](Node n) { return MatrixShape{tape.value(n).height(), tape.value(n).width()}; };
    *trace = {dims(rows), dims(hidden), dims(out)};
  }
  return tape.sigmoid(tape.from_rows(out, shape));
}

Node GamChannel::apply(Tape& tape, Node x, ChannelTrace* trace) const {
  return tape.mul(x, gate(tape, x, trace));
}

GamSpatial GamSpatial::make(int channels, int rate, WeightInit& init) {
  if (rate < 1 || channels % rate != 0) {
    throw ShapeError("GAM spatial attention needs C divisible by r (C=" + std::to_string(channels) +
                     ", r=" + std::to_string(rate) + ")");
  }
  GamSpatial g;
  g.rate = rate;
  g.conv1 = ConvWeights(channels / rate, channels, 7);
  g.conv2 = ConvWeights(channels, channels / rate, 7);
  init.fill(g.conv1);
  init.fill(g.conv2);
  return g;
}

Node GamSpatial::gate(Tape& tape, Node x) const {
  const Node h = tape.relu(tape.conv(x, conv1, 1, 3));
  return tape.sigmoid(tape.conv(h, conv2, 1, 3));
}

Node GamSpatial::apply(Tape& tape, Node x) const { return tape.mul(x, gate(tape, x)); }

Gam Gam::make(int channels, int rate, WeightInit& init) {
  Gam g;
  g.channel = GamChannel::make(channels, init);
  g.spatial = GamSpatial::make(channels, rate, init);
  return g;
}

Node Gam::apply(Tape& tape, Node x, ChannelTrace* trace) const {
  return spatial.apply(tape, channel.apply(tape, x, trace));
}

Node DetectBranch::apply(Tape& tape, Node x) const {
  return tape.conv(b.apply(tape, a.apply(tape, x)), out, 1, 0);
}

int Detect::box_hidden(int channels) noexcept { return std::max(16, channels / 4); }

int Detect::cls_hidden(int channels, int num_classes) noexcept {
  return std::max(channels, std::min(num_classes, 100));
}

Detect Detect::make(const std::vector<int>& in_channels, int num_classes, WeightInit& init) {
  if (num_classes < 1) throw ShapeError("detect head needs at least one category");
  if (in_channels.empty()) throw ShapeError("detect head needs at least one input scale");
  Detect d;
  d.num_classes = num_classes;
  for (int ch : in_channels) {
    const int c2 = box_hidden(ch);
    const int c3 = cls_hidden(ch, num_classes);
    Scale s;
    s.box.a = ConvBlock::make(ch, c2, 3, 1, init);
    s.box.b = ConvBlock::make(c2, c2, 3, 1, init);
    s.box.out = ConvWeights(4, c2, 1);
    init.fill(s.box.out);
    s.cls.a = ConvBlock::make(ch, c3, 3, 1, init);
    s.cls.b = ConvBlock::make(c3, c3, 3, 1, init);
    s.cls.out = ConvWeights(num_classes, c3, 1);
    init.fill(s.cls.out);
    d.scales.push_back(std::move(s));
  }
  return d;
}

std::vector<std::pair<Node, Node>> Detect::apply(Tape& tape, const std::vector<Node>& inputs) const {
  if (inputs.size() != scales.size()) {
    throw ShapeError("detect head expects " + std::to_string(scales.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  std::vector<std::pair<Node, Node>> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out.emplace_back(scales[i].box.apply(tape, inputs[i]), scales[i].cls.apply(tape, inputs[i]));
  }
  return out;
}

Tensor3 c2f_forward(const Tensor3& input, const C2f& params) {
  Tape tape;
  return tape.value(params.apply(tape, tape.input(input)));
}

Tensor3 sppf_forward(const Tensor3& input, const Sppf& params) {
  Tape tape;
  return tape.value(params.apply(tape, tape.input(input)));
}

Tensor3 gam_channel_attention(const Tensor3& input, const GamChannel& params, ChannelTrace* trace) {
  Tape tape;
  return tape.value(params.apply(tape, tape.input(input), trace));
}

Tensor3 gam_spatial_attention(const Tensor3& input, const GamSpatial& params) {
  Tape tape;
  return tape.value(params.apply(tape, tape.input(input)));
}

Tensor3 gam_forward(const Tensor3& input, const Gam& params) {
  Tape tape;
  return tape.value(params.apply(tape, tape.input(input)));
}

}  // namespace trapeval::blocks
