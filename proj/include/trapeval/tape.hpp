#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trapeval/tensor.hpp"

namespace trapeval {

/// Records primitive tensor operations as they are evaluated so gradients
/// can be pulled back from any node to any earlier node.  Weights are held by
/// pointer and must outlive the tape.
class Tape {
 public:
  using Node = std::size_t;

  Node input(Tensor3 value);
  Node conv(Node x, const ConvWeights& weights, int stride, int padding);
  Node silu(Node x);
  Node relu(Node x);
  Node sigmoid(Node x);
  Node maxpool(Node x, int kernel, int padding);
  Node upsample(Node x, int factor);
  Node concat(std::span<const Node> inputs);
  /// Channels [begin, end) of x.
  Node slice(Node x, int begin, int end);
  Node add(Node a, Node b);
  /// Elementwise product of equally shaped tensors.
  Node mul(Node a, Node b);
  Node to_rows(Node x);
  Node from_rows(Node rows, const Shape3& shape);
  Node linear(Node rows, const LinearWeights& weights);

  [[nodiscard]] const Tensor3& value(Node n) const { return nodes_.at(n).value; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// True when `target` lies on some path into `from`.
  [[nodiscard]] bool is_ancestor(Node target, Node from) const;

  struct Seed {
    Node node;
    Tensor3 grad;  ///< d(score)/d(node value)
  };

  /// Gradient of sum_i <seed_i.grad, value(seed_i.node)> with respect to the
  /// value of `target`.  Throws GraphError when no seed depends on it.
  [[nodiscard]] Tensor3 gradient(std::span<const Seed> seeds, Node target) const;

 private:
  enum class Op { Input, Conv, Silu, Relu, Sigmoid, MaxPool, Upsample, Concat, Slice, Add, Mul,
                  ToRows, FromRows, Linear };
  struct Record {
    Record(Op o, std::vector<Node> in, Tensor3 v) : op(o), args(std::move(in)), value(std::move(v)) {}
    Op op;
    std::vector<Node> args;
    Tensor3 value;
    const ConvWeights* conv{nullptr};
    const LinearWeights* linear{nullptr};
    int a{0}, b{0};                     ///< stride/padding, factor, slice range
    std::vector<std::size_t> argmax;  ///< max pooling routes
  };

  Node push(Record r);
  void check(Node n) const;
  void pull_back(const Record& r, const Tensor3& g, std::vector<std::optional<Tensor3>>& grads) const;

  std::vector<Record> nodes_;
};

}  // namespace trapeval
