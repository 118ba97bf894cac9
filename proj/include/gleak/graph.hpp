// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "gleak/kernels.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAffine,
  kRelu,
  kLeakyRelu,
  kSigmoid,
  kSoftplus,
  kLog,
  kExp,
  kSqrt,
  kAbs,
  kSum,
  kMean,
  kBroadcast,
  kGather,
  kScatterAdd,
  kMaxPool2d,
  kReshape,
  kConcat,
  kDropout,
  // Composite kinds: forward_op expands them into the primitives above.
  kConv2d,
  kPad,
};

const char* op_name(OpKind op);

using IndexMap = std::shared_ptr<const std::vector<kernels::Index>>;

struct OpAttrs {
  double alpha = 0.0;  // scale factor, leaky slope, affine slope
  double beta = 0.0;   // affine offset
  bool trans_a = false;
  bool trans_b = false;
  Shape shape;          // output shape for gather/scatter/broadcast/reshape
  IndexMap index;       // gather/scatter map, maxpool argmax
  std::shared_ptr<const Tensor> mask;  // dropout keep-mask, pre-scaled
  kernels::ConvGeometry geom;          // maxpool window, conv geometry
  std::size_t axis = 0;                // concat axis
};

struct Node {
  OpKind op = OpKind::kLeaf;
  std::vector<NodeId> inputs;
  OpAttrs attrs;
  Tensor value;
  bool requires_grad = false;
};

/// Append-only record of tensor operations. Node inputs always precede the
/// node itself, so ids double as a topological order. A graph is confined to
/// one thread.
class Graph {
 public:
  NodeId leaf(Tensor value);
  NodeId constant(Tensor value);

  /// Appends `op` applied to `inputs`; validates shapes and computes the value.
  NodeId apply(OpKind op, std::span<const NodeId> inputs, OpAttrs attrs = {});
  NodeId apply(OpKind op, std::initializer_list<NodeId> inputs, OpAttrs attrs = {}) {
    return apply(op, std::span<const NodeId>(inputs.begin(), inputs.size()), std::move(attrs));
  }

  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor& value(NodeId id) const { return node(id).value; }
  const Shape& shape(NodeId id) const { return node(id).value.shape(); }
  std::size_t size() const { return nodes_.size(); }

  /// Recomputes node `id` from the cached values of its inputs.
  Tensor recompute(NodeId id) const;
  /// True when re-evaluating every non-leaf node reproduces its cached value bit-exactly.
  bool replay_matches() const;

  /// Drops every node with id >= n. Only used to discard scratch nodes that
  /// no surviving node refers to (non-differentiable backward).
  void truncate(std::size_t n);

 private:
  std::vector<Node> nodes_;
};

/// Gradients of one backward pass. When the pass was differentiable every
/// gradient is itself a node of the graph; otherwise only values are kept.
class GradMap {
 public:
  bool differentiable() const { return differentiable_; }
  bool contains(NodeId id) const;
  /// Gradient node (differentiable passes only).
  NodeId node(NodeId id) const;
  /// Gradient value; zeros of the node's shape when `id` does not reach the root.
  Tensor tensor(NodeId id) const;

 private:
  friend GradMap backward(Graph&, NodeId, bool, std::span<const NodeId>);
  const Graph* graph_ = nullptr;
  bool differentiable_ = false;
  std::vector<NodeId> grad_nodes_;
  std::vector<Shape> shapes_;
  std::vector<std::shared_ptr<const Tensor>> values_;
};

/// Reverse-mode gradient of scalar `root` with respect to its ancestors. With
/// `differentiable` set, every backward computation is appended to `graph` so
/// the returned gradients can themselves be differentiated. A non-empty
/// `targets` list restricts work to nodes lying on a path from a target to the
/// root.
GradMap backward(Graph& graph, NodeId root, bool differentiable,
                 std::span<const NodeId> targets = {});

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double h);

/// Thin builders over Graph::apply.
namespace ops {
NodeId matmul(Graph& g, NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId div(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, double s);
NodeId affine(Graph& g, NodeId a, double s, double c);
NodeId relu(Graph& g, NodeId a);
NodeId leaky_relu(Graph& g, NodeId a, double slope);
NodeId sigmoid(Graph& g, NodeId a);
NodeId softplus(Graph& g, NodeId a);
NodeId log(Graph& g, NodeId a);
NodeId exp(Graph& g, NodeId a);
NodeId sqrt(Graph& g, NodeId a);
NodeId abs(Graph& g, NodeId a);
NodeId sum(Graph& g, NodeId a);
NodeId mean(Graph& g, NodeId a);
NodeId broadcast(Graph& g, NodeId scalar, Shape shape);
NodeId gather(Graph& g, NodeId a, IndexMap index, Shape shape);
NodeId scatter_add(Graph& g, NodeId a, IndexMap index, Shape shape);
NodeId reshape(Graph& g, NodeId a, Shape shape);
NodeId concat(Graph& g, std::span<const NodeId> parts, std::size_t axis);
NodeId dropout(Graph& g, NodeId a, std::shared_ptr<const Tensor> keep_mask);
NodeId maxpool2d(Graph& g, NodeId x, std::size_t kernel, std::size_t stride);
NodeId pad2d(Graph& g, NodeId x, std::size_t pad);
/// x [B,C,H,W], w [Cout,C,k,k], optional bias [Cout] (kNoNode to skip).
NodeId conv2d(Graph& g, NodeId x, NodeId w, NodeId bias, std::size_t stride, std::size_t pad);
/// Adjoint of conv2d in x: x [B,Cin,H,W], w [Cin,Cout,k,k].
NodeId conv_transpose2d(Graph& g, NodeId x, NodeId w, NodeId bias, std::size_t stride,
                        std::size_t pad);
/// Adds bias [C] to every channel of x [B,C,...] or every row of x [B,C].
NodeId add_channel_bias(Graph& g, NodeId x, NodeId bias);
/// Sum of squares, dot products and similar scalar reductions.
NodeId dot(Graph& g, NodeId a, NodeId b);
/// Sums each row of a [R, C] into [R].
NodeId row_sum(Graph& g, NodeId a);
/// Broadcasts r [R] to [R, C].
NodeId expand_rows(Graph& g, NodeId r, std::size_t cols);
}  // namespace ops

/// Shared index maps (im2col, permutations) keyed by geometry.
namespace index_cache {
IndexMap im2col(const kernels::ConvGeometry& geom);
IndexMap rows_to_nchw(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w);
IndexMap channel_broadcast(const Shape& shape);
IndexMap pad2d(const Shape& shape, std::size_t pad);
IndexMap row_sum(std::size_t rows, std::size_t cols);
}  // namespace index_cache

}  // namespace gleak
