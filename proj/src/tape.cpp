#include "trapeval/tape.hpp"

#include <algorithm>
#include <cmath>

#include "trapeval/error.hpp"

namespace trapeval {
namespace {

void accumulate(std::optional<Tensor3>& slot, const Tensor3& g) {
  if (!slot) {
    slot = g;
    return;
  }
  auto& dst = slot->values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.values()[i];
}

std::optional<Tensor3>& zero_slot(std::optional<Tensor3>& slot, const Shape3& shape) {
  if (!slot) slot.emplace(shape);
  return slot;
}

}  // namespace

Tape::Node Tape::push(Record r) {
  nodes_.push_back(std::move(r));
  return nodes_.size() - 1;
}

void Tape::check(Node n) const {
  if (n >= nodes_.size()) throw GraphError("tape node " + std::to_string(n) + " does not exist");
}

Tape::Node Tape::input(Tensor3 value) {
  return push({Op::Input, {}, std::move(value)});
}

Tape::Node Tape::conv(Node x, const ConvWeights& weights, int stride, int padding) {
  check(x);
  Record r{Op::Conv, {x}, trapeval::conv2d(value(x), weights, stride, padding)};
  r.conv = &weights;
  r.a = stride;
  r.b = padding;
  return push(std::move(r));
}

Tape::Node Tape::silu(Node x) {
  check(x);
  Tensor3 out = value(x);
  for (double& v : out.values()) v = trapeval::silu(v);
  return push({Op::Silu, {x}, std::move(out)});
}

Tape::Node Tape::relu(Node x) {
  check(x);
  Tensor3 out = value(x);
  for (double& v : out.values()) v = std::max(v, 0.0);
  return push({Op::Relu, {x}, std::move(out)});
}

Tape::Node Tape::sigmoid(Node x) {
  check(x);
  Tensor3 out = value(x);
  for (double& v : out.values()) v = trapeval::sigmoid(v);
  return push({Op::Sigmoid, {x}, std::move(out)});
}

Tape::Node Tape::maxpool(Node x, int kernel, int padding) {
  check(x);
  const Tensor3& in = value(x);
  std::vector<std::size_t> arg = maxpool2d_argmax(in, kernel, padding);
  Tensor3 out(in.channels(), conv_output_dim(in.height(), {kernel, 1, padding}),
              conv_output_dim(in.width(), {kernel, 1, padding}));
  for (std::size_t i = 0; i < arg.size(); ++i) out.values()[i] = in.values()[arg[i]];
  Record r{Op::MaxPool, {x}, std::move(out)};
  r.argmax = std::move(arg);
  return push(std::move(r));
}

Tape::Node Tape::upsample(Node x, int factor) {
  check(x);
  Record r{Op::Upsample, {x}, upsample_nearest(value(x), factor)};
  r.a = factor;
  return push(std::move(r));
}

Tape::Node Tape::concat(std::span<const Node> inputs) {
  std::vector<Tensor3> parts;
  parts.reserve(inputs.size());
  for (Node n : inputs) {
    check(n);
    parts.push_back(value(n));
  }
  return push({Op::Concat, {inputs.begin(), inputs.end()}, concat_channels(parts)});
}

Tape::Node Tape::slice(Node x, int begin, int end) {
  check(x);
  const Tensor3& in = value(x);
  if (begin < 0 || end > in.channels() || begin >= end) {
    throw ShapeError("channel slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + in.shape().to_string());
  }
  const auto first = in.values().begin() + static_cast<std::ptrdiff_t>(begin * in.plane());
  const auto last = in.values().begin() + static_cast<std::ptrdiff_t>(end * in.plane());
  Record r{Op::Slice, {x}, Tensor3(Shape3{end - begin, in.height(), in.width()}, std::vector<double>(first, last))};
  r.a = begin;
  r.b = end;
  return push(std::move(r));
}

Tape::Node Tape::add(Node a, Node b) {
  check(a);
  check(b);
  if (value(a).shape() != value(b).shape()) {
    throw ShapeError("add of " + value(a).shape().to_string() + " and " + value(b).shape().to_string());
  }
  Tensor3 out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += value(b).values()[i];
  return push({Op::Add, {a, b}, std::move(out)});
}

Tape::Node Tape::mul(Node a, Node b) {
  check(a);
  check(b);
  if (value(a).shape() != value(b).shape()) {
    throw ShapeError("product of " + value(a).shape().to_string() + " and " + value(b).shape().to_string());
  }
  Tensor3 out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] *= value(b).values()[i];
  return push({Op::Mul, {a, b}, std::move(out)});
}

Tape::Node Tape::to_rows(Node x) {
  check(x);
  return push({Op::ToRows, {x}, trapeval::to_rows(value(x))});
}

Tape::Node Tape::from_rows(Node rows, const Shape3& shape) {
  check(rows);
  return push({Op::FromRows, {rows}, trapeval::from_rows(value(rows), shape)});
}

Tape::Node Tape::linear(Node rows, const LinearWeights& weights) {
  check(rows);
  Record r{Op::Linear, {rows}, linear_rows(value(rows), weights)};
  r.linear = &weights;
  return push(std::move(r));
}

bool Tape::is_ancestor(Node target, Node from) const {
  check(target);
  check(from);
  if (target > from) return false;
  std::vector<bool> reach(from + 1, false);
  reach[from] = true;
  for (Node n = from + 1; n-- > target;) {
    if (!reach[n]) continue;
    if (n == target) return true;
    for (Node a : nodes_[n].args) reach[a] = true;
  }
  return false;
}

void Tape::pull_back(const Record& r, const Tensor3& g, std::vector<std::optional<Tensor3>>& grads) const {
  const Node x = r.args.empty() ? 0 : r.args.front();
  switch (r.op) {
    case Op::Input: return;
    case Op::Conv: {
      auto& slot = zero_slot(grads[x], value(x).shape());
      conv2d_backward_input(g, *r.conv, r.a, r.b, *slot);
      return;
    }
    case Op::Silu: {
      Tensor3 d = g;
      const auto& in = value(x).values();
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double s = trapeval::sigmoid(in[i]);
        d.values()[i] *= s * (1.0 + in[i] * (1.0 - s));
      }
      accumulate(grads[x], d);
      return;
    }
    case Op::Relu: {
      Tensor3 d = g;
      const auto& in = value(x).values();
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!(in[i] > 0.0)) d.values()[i] = 0.0;
      accumulate(grads[x], d);
      return;
    }
    case Op::Sigmoid: {
      Tensor3 d = g;
      const auto& out = r.value.values();
      for (std::size_t i = 0; i < d.size(); ++i) d.values()[i] *= out[i] * (1.0 - out[i]);
      accumulate(grads[x], d);
      return;
    }
    case Op::MaxPool: {
      auto& slot = zero_slot(grads[x], value(x).shape());
      for (std::size_t i = 0; i < r.argmax.size(); ++i) slot->values()[r.argmax[i]] += g.values()[i];
      return;
    }
    case Op::Upsample: {
      const Tensor3& in = value(x);
      auto& slot = zero_slot(grads[x], in.shape());
      for (int c = 0; c < g.channels(); ++c)
        for (int y = 0; y < g.height(); ++y)
          for (int xx = 0; xx < g.width(); ++xx) slot->at(c, y / r.a, xx / r.a) += g.at(c, y, xx);
      return;
    }
    case Op::Concat: {
      std::size_t offset = 0;
      for (Node a : r.args) {
        const Tensor3& part = value(a);
        const auto first = g.values().begin() + static_cast<std::ptrdiff_t>(offset);
        accumulate(grads[a], Tensor3(part.shape(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(part.size()))));
        offset += part.size();
      }
      return;
    }
    case Op::Slice: {
      const Tensor3& in = value(x);
      auto& slot = zero_slot(grads[x], in.shape());
      const std::size_t offset = static_cast<std::size_t>(r.a) * in.plane();
      for (std::size_t i = 0; i < g.size(); ++i) slot->values()[offset + i] += g.values()[i];
      return;
    }
    case Op::Add:
      accumulate(grads[r.args[0]], g);
      accumulate(grads[r.args[1]], g);
      return;
    case Op::Mul: {
      Tensor3 da = g;
      Tensor3 db = g;
      const auto& a = value(r.args[0]).values();
      const auto& b = value(r.args[1]).values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        da.values()[i] *= b[i];
        db.values()[i] *= a[i];
      }
      accumulate(grads[r.args[0]], da);
      accumulate(grads[r.args[1]], db);
      return;
    }
    case Op::ToRows:
      accumulate(grads[x], trapeval::from_rows(g, value(x).shape()));
      return;
    case Op::FromRows:
      accumulate(grads[x], trapeval::to_rows(g));
      return;
    case Op::Linear: {
      const LinearWeights& lw = *r.linear;
      auto& slot = zero_slot(grads[x], value(x).shape());
      for (int row = 0; row < g.height(); ++row) {
        const double* go = g.data() + static_cast<std::size_t>(row) * lw.out_features;
        double* gi = slot->data() + static_cast<std::size_t>(row) * lw.in_features;
        for (int o = 0; o < lw.out_features; ++o) {
          const double* w = lw.weights.data() + static_cast<std::size_t>(o) * lw.in_features;
          for (int i = 0; i < lw.in_features; ++i) gi[i] += go[o] * w[i];
        }
      }
      return;
    }
  }
}

Tensor3 Tape::gradient(std::span<const Seed> seeds, Node target) const {
  check(target);
  if (seeds.empty()) throw GraphError("gradient needs at least one seed");
  Node top = target;
  std::vector<std::optional<Tensor3>> grads(nodes_.size());
  for (const Seed& s : seeds) {
    check(s.node);
    if (s.grad.shape() != value(s.node).shape()) {
      throw ShapeError("seed gradient " + s.grad.shape().to_string() + " does not match node shape " +
                       value(s.node).shape().to_string());
    }
    accumulate(grads[s.node], s.grad);
    top = std::max(top, s.node);
  }
  bool connected = false;
  for (const Seed& s : seeds) connected = connected || is_ancestor(target, s.node);
  if (!connected) throw GraphError("target node does not feed the selected score");

  for (Node n = top; n > target; --n) {
    if (!grads[n]) continue;
    pull_back(nodes_[n], *grads[n], grads);
    grads[n].reset();
  }
  return grads[target] ? *grads[target] : Tensor3(value(target).shape());
}

}  // namespace trapeval
