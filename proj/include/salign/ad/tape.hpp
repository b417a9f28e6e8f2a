#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "salign/tensor.hpp"

namespace salign::ad {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  AddRow,
  MulRow,
  Scale,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Relu,
  Softmax,
  LogSoftmax,
  Gather,
  StackRows,
  Concat,
  SliceRows,
  SliceCols,
  Sum,
  Mean,
  MeanRows,
  Pick,
  Transpose,
  Reshape,
  LayerNorm,
};

const char* op_name(Op op) noexcept;

/// One recorded operation. Inputs always have smaller ids than the node.
struct Node {
  Op op = Op::Constant;
  bool requires_grad = false;
  bool squeeze = false;
  std::array<NodeId, 2> in{kNoNode, kNoNode};
  std::vector<NodeId> many;
  std::vector<std::size_t> index;
  std::size_t begin = 0;
  std::size_t end = 0;
  double factor = 0.0;
  Tensor value;
  const Tensor* borrowed = nullptr;
  std::vector<double> saved;

  const Tensor& result() const noexcept { return borrowed ? *borrowed : value; }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  NodeId id = kNoNode;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape != nullptr && id != kNoNode; }
};

/// Append-only record of a computation. Single writer while it is being built;
/// read-only (and shareable) afterwards.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Registered leaf that owns its value; gradients are reported for it.
  Var leaf(Tensor value);
  /// Registered leaf that refers to caller-owned storage, which must outlive
  /// the tape and stay unchanged.
  Var leaf_ref(const Tensor& value);
  /// Untracked input; no gradient flows into it.
  Var constant(Tensor value);
  Var constant_ref(const Tensor& value);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  const Node& node(NodeId id) const { return nodes_[id]; }
  const Tensor& value(NodeId id) const { return nodes_[id].result(); }
  std::span<const NodeId> leaves() const noexcept { return leaves_; }

  /// Used by the primitive constructors in ops.hpp.
  Var record(Node node);

 private:
  std::vector<Node> nodes_;
  std::vector<NodeId> leaves_;
};

/// d(scalar output)/d(leaf) for every registered leaf of a tape.
class GradientStore {
 public:
  const Tensor& operator[](NodeId leaf) const;
  const Tensor& operator[](Var leaf) const { return (*this)[leaf.id]; }
  bool contains(NodeId leaf) const { return grads_.count(leaf) != 0; }
  std::size_t size() const noexcept { return grads_.size(); }
  bool empty() const noexcept { return grads_.empty(); }
  const std::map<NodeId, Tensor>& entries() const noexcept { return grads_; }

 private:
  friend GradientStore backward(const Tape&, Var, std::span<const Var>);
  std::map<NodeId, Tensor> grads_;
};

/// Reverse-mode pass from a scalar node. When `wrt` is non-empty only those
/// leaves are reported; otherwise every registered leaf is. An empty tape
/// yields an empty store.
GradientStore backward(const Tape& tape, Var output, std::span<const Var> wrt = {});

}  // namespace salign::ad
