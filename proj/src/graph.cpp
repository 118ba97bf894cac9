// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "gleak/error.hpp"

namespace gleak {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAffine: return "affine";
    case OpKind::kRelu: return "relu";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kAbs: return "abs";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kGather: return "gather";
    case OpKind::kScatterAdd: return "scatter_add";
    case OpKind::kMaxPool2d: return "maxpool2d";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kDropout: return "dropout";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kPad: return "pad";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(OpKind op, const std::vector<const Tensor*>& in,
                              const std::string& why) {
  std::string msg = why + "; inputs";
  for (const auto* t : in) msg += " " + shape_str(t->shape());
  fail(ErrorCode::kShapeMismatch, op_name(op), msg);
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

struct ConcatLayout {
  std::size_t outer = 1, inner = 1;
  std::vector<std::size_t> widths;  // axis extent of each part
  std::size_t total = 0;
};

ConcatLayout concat_layout(OpKind op, const std::vector<const Tensor*>& in, std::size_t axis) {
  if (in.empty()) fail(ErrorCode::kInvalidArgument, "concat", "no inputs");
  const Shape& s0 = in[0]->shape();
  if (axis >= s0.size()) shape_error(op, in, "axis out of range");
  ConcatLayout lay;
  for (std::size_t d = 0; d < axis; ++d) lay.outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) lay.inner *= s0[d];
  for (const auto* t : in) {
    const Shape& s = t->shape();
    if (s.size() != s0.size()) shape_error(op, in, "rank differs");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != s0[d]) shape_error(op, in, "non-axis dims differ");
    lay.widths.push_back(s[axis]);
    lay.total += s[axis];
  }
  return lay;
}

// Computes the value of a primitive node. `attrs` may be filled in (maxpool argmax).
Tensor evaluate(OpKind op, const std::vector<const Tensor*>& in, OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n)
      fail(ErrorCode::kInvalidArgument, op_name(op),
           "expects " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
  };
  auto same = [&]() {
    need(2);
    if (in[0]->shape() != in[1]->shape()) shape_error(op, in, "shapes must match");
  };
  switch (op) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
    case OpKind::kConv2d:
    case OpKind::kPad:
      fail(ErrorCode::kInvalidArgument, op_name(op), "not a primitive computation");
    case OpKind::kMatMul: {
      need(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.ndim() != 2 || b.ndim() != 2) shape_error(op, in, "operands must be 2-D");
      const std::size_t m = attrs.trans_a ? a.dim(1) : a.dim(0);
      const std::size_t k = attrs.trans_a ? a.dim(0) : a.dim(1);
      const std::size_t kb = attrs.trans_b ? b.dim(1) : b.dim(0);
      const std::size_t n = attrs.trans_b ? b.dim(0) : b.dim(1);
      if (k != kb) shape_error(op, in, "inner dimensions differ");
      Tensor out({m, n});
      kernels::gemm(attrs.trans_a, attrs.trans_b, m, n, k, a.data().data(), b.data().data(),
                    out.data().data());
      return out;
    }
    case OpKind::kAdd:
      same();
      return map_binary(*in[0], *in[1], [](double x, double y) { return x + y; });
    case OpKind::kSub:
      same();
      return map_binary(*in[0], *in[1], [](double x, double y) { return x - y; });
    case OpKind::kMul:
      same();
      return map_binary(*in[0], *in[1], [](double x, double y) { return x * y; });
    case OpKind::kDiv:
      same();
      return map_binary(*in[0], *in[1], [](double x, double y) { return x / y; });
    case OpKind::kScale: {
      need(1);
      const double s = attrs.alpha;
      return map_unary(*in[0], [s](double x) { return s * x; });
    }
    case OpKind::kAffine: {
      need(1);
      const double s = attrs.alpha, c = attrs.beta;
      return map_unary(*in[0], [s, c](double x) { return s * x + c; });
    }
    case OpKind::kRelu:
      need(1);
      return map_unary(*in[0], [](double x) { return x > 0.0 ? x : 0.0; });
    case OpKind::kLeakyRelu: {
      need(1);
      const double s = attrs.alpha;
      return map_unary(*in[0], [s](double x) { return x > 0.0 ? x : s * x; });
    }
    case OpKind::kSigmoid:
      need(1);
      return map_unary(*in[0], sigmoid_scalar);
    case OpKind::kSoftplus:
      need(1);
      return map_unary(*in[0], softplus_scalar);
    case OpKind::kLog:
      need(1);
      return map_unary(*in[0], [](double x) { return std::log(x); });
    case OpKind::kExp:
      need(1);
      return map_unary(*in[0], [](double x) { return std::exp(x); });
    case OpKind::kSqrt:
      need(1);
      return map_unary(*in[0], [](double x) { return std::sqrt(x); });
    case OpKind::kAbs:
      need(1);
      return map_unary(*in[0], [](double x) { return std::abs(x); });
    case OpKind::kSum:
    case OpKind::kMean: {
      need(1);
      double s = 0.0;
      for (double v : in[0]->data()) s += v;
      if (op == OpKind::kMean) {
        if (in[0]->size() == 0) shape_error(op, in, "mean of empty tensor");
        s /= static_cast<double>(in[0]->size());
      }
      return Tensor::scalar(s);
    }
    case OpKind::kBroadcast:
      need(1);
      if (in[0]->size() != 1) shape_error(op, in, "broadcast source must hold one element");
      return Tensor::full(attrs.shape, (*in[0])[0]);
    case OpKind::kGather: {
      need(1);
      if (!attrs.index || attrs.index->size() != shape_numel(attrs.shape))
        shape_error(op, in, "index map size differs from output " + shape_str(attrs.shape));
      Tensor out(attrs.shape);
      kernels::gather(in[0]->data(), *attrs.index, out.data());
      return out;
    }
    case OpKind::kScatterAdd: {
      need(1);
      if (!attrs.index || attrs.index->size() != in[0]->size())
        shape_error(op, in, "index map size differs from source");
      Tensor out(attrs.shape);
      kernels::scatter_add(in[0]->data(), *attrs.index, out.data());
      return out;
    }
    case OpKind::kMaxPool2d: {
      need(1);
      kernels::ConvGeometry& g = attrs.geom;
      const Shape& s = in[0]->shape();
      if (s.size() != 4) shape_error(op, in, "expects NCHW");
      g.batch = s[0];
      g.channels = s[1];
      g.height = s[2];
      g.width = s[3];
      g.pad = 0;
      if (!g.valid()) shape_error(op, in, "window larger than input");
      Shape os{g.batch, g.channels, g.out_h(), g.out_w()};
      auto idx = std::make_shared<std::vector<kernels::Index>>(shape_numel(os));
      kernels::maxpool_argmax(in[0]->data(), g, *idx);
      Tensor out(os);
      kernels::gather(in[0]->data(), *idx, out.data());
      attrs.index = std::move(idx);
      attrs.shape = os;
      return out;
    }
    case OpKind::kReshape:
      need(1);
      if (shape_numel(attrs.shape) != in[0]->size())
        shape_error(op, in, "cannot reshape to " + shape_str(attrs.shape));
      return in[0]->reshaped(attrs.shape);
    case OpKind::kConcat: {
      const ConcatLayout lay = concat_layout(op, in, attrs.axis);
      Shape os = in[0]->shape();
      os[attrs.axis] = lay.total;
      Tensor out(os);
      auto dst = out.data();
      std::size_t offset = 0;
      for (std::size_t p = 0; p < in.size(); ++p) {
        auto src = in[p]->data();
        const std::size_t w = lay.widths[p] * lay.inner;
        for (std::size_t o = 0; o < lay.outer; ++o)
          std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                      dst.begin() + static_cast<std::ptrdiff_t>(o * lay.total * lay.inner + offset));
        offset += w;
      }
      return out;
    }
    case OpKind::kDropout:
      need(1);
      if (!attrs.mask || attrs.mask->shape() != in[0]->shape())
        shape_error(op, in, "dropout mask shape differs");
      return map_binary(*in[0], *attrs.mask, [](double x, double m) { return x * m; });
  }
  fail(ErrorCode::kInvalidArgument, "forward_op", "unknown op");
}

}  // namespace

NodeId Graph::leaf(Tensor value) {
  Node n;
  n.op = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = OpKind::kConstant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::apply(OpKind op, std::span<const NodeId> inputs, OpAttrs attrs) {
  if (op == OpKind::kConv2d) {
    if (inputs.size() != 2 && inputs.size() != 3)
      fail(ErrorCode::kInvalidArgument, "conv2d", "expects x, w and optional bias");
    return ops::conv2d(*this, inputs[0], inputs[1], inputs.size() == 3 ? inputs[2] : kNoNode,
                       attrs.geom.stride, attrs.geom.pad);
  }
  if (op == OpKind::kPad) {
    if (inputs.size() != 1) fail(ErrorCode::kInvalidArgument, "pad", "expects one input");
    return ops::pad2d(*this, inputs[0], attrs.geom.pad);
  }
  if (op == OpKind::kLeaf || op == OpKind::kConstant)
    fail(ErrorCode::kInvalidArgument, op_name(op), "use Graph::leaf / Graph::constant");

  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  bool rg = false;
  for (NodeId id : inputs) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      fail(ErrorCode::kOutOfRange, op_name(op), "input id " + std::to_string(id));
    in.push_back(&nodes_[static_cast<std::size_t>(id)].value);
    rg = rg || nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  Node n;
  n.value = evaluate(op, in, attrs);
  n.op = op;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.attrs = std::move(attrs);
  n.requires_grad = rg;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor Graph::recompute(NodeId id) const {
  const Node& n = node(id);
  if (n.op == OpKind::kLeaf || n.op == OpKind::kConstant) return n.value;
  std::vector<const Tensor*> in;
  for (NodeId i : n.inputs) in.push_back(&node(i).value);
  OpAttrs attrs = n.attrs;
  return evaluate(n.op, in, attrs);
}

bool Graph::replay_matches() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Tensor v = recompute(static_cast<NodeId>(i));
    if (!(v == nodes_[i].value)) return false;
  }
  return true;
}

void Graph::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.resize(n);
}

// ---------------------------------------------------------------------------
// GradMap

bool GradMap::contains(NodeId id) const {
  const auto i = static_cast<std::size_t>(id);
  if (differentiable_) return i < grad_nodes_.size() && grad_nodes_[i] != kNoNode;
  return i < values_.size() && values_[i] != nullptr;
}

NodeId GradMap::node(NodeId id) const {
  if (!differentiable_)
    fail(ErrorCode::kPrecondition, "GradMap::node", "backward was not differentiable");
  if (!contains(id))
    fail(ErrorCode::kOutOfRange, "GradMap::node", "no gradient for node " + std::to_string(id));
  return grad_nodes_[static_cast<std::size_t>(id)];
}

Tensor GradMap::tensor(NodeId id) const {
  const auto i = static_cast<std::size_t>(id);
  if (i >= shapes_.size())
    fail(ErrorCode::kOutOfRange, "GradMap::tensor", "node " + std::to_string(id));
  if (!contains(id)) return Tensor(shapes_[i]);
  if (differentiable_) return graph_->value(grad_nodes_[i]);
  return *values_[i];
}

// ---------------------------------------------------------------------------
// backward

namespace {

NodeId accumulate(Graph& g, NodeId acc, NodeId add) {
  return acc == kNoNode ? add : ops::add(g, acc, add);
}

// Index map selecting part `p` of a concat result.
IndexMap concat_slice(const Shape& out_shape, std::size_t axis,
                      const std::vector<std::size_t>& widths, std::size_t p) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  std::size_t total = 0, before = 0;
  for (std::size_t q = 0; q < widths.size(); ++q) {
    if (q < p) before += widths[q];
    total += widths[q];
  }
  const std::size_t w = widths[p] * inner;
  auto idx = std::make_shared<std::vector<kernels::Index>>(outer * w);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < w; ++j)
      (*idx)[o * w + j] = static_cast<kernels::Index>(o * total * inner + before * inner + j);
  return idx;
}

// Vector-Jacobian product of node `id` with respect to input position `pos`,
// given the adjoint node `gid`. Only graph ops are used so the result is
// differentiable again.
NodeId vjp(Graph& g, NodeId id, std::size_t pos, NodeId gid) {
  // Copy what we need: appending nodes may reallocate the node store.
  const OpKind op = g.node(id).op;
  const std::vector<NodeId> in = g.node(id).inputs;
  const OpAttrs attrs = g.node(id).attrs;
  const NodeId x = in[pos];
  const Shape in_shape = g.shape(x);

  switch (op) {
    case OpKind::kMatMul: {
      const bool ta = attrs.trans_a, tb = attrs.trans_b;
      const NodeId a = in[0], b = in[1];
      if (pos == 0) {
        if (!ta && !tb) return ops::matmul(g, gid, b, false, true);
        if (!ta && tb) return ops::matmul(g, gid, b, false, false);
        if (ta && !tb) return ops::matmul(g, b, gid, false, true);
        return ops::matmul(g, b, gid, true, true);
      }
      if (!ta && !tb) return ops::matmul(g, a, gid, true, false);
      if (!ta && tb) return ops::matmul(g, gid, a, true, false);
      if (ta && !tb) return ops::matmul(g, a, gid, false, false);
      return ops::matmul(g, gid, a, true, true);
    }
    case OpKind::kAdd: return gid;
    case OpKind::kSub: return pos == 0 ? gid : ops::scale(g, gid, -1.0);
    case OpKind::kMul: return ops::mul(g, gid, in[1 - pos]);
    case OpKind::kDiv:
      if (pos == 0) return ops::div(g, gid, in[1]);
      return ops::scale(g, ops::mul(g, gid, ops::div(g, id, in[1])), -1.0);
    case OpKind::kScale:
    case OpKind::kAffine: return ops::scale(g, gid, attrs.alpha);
    case OpKind::kRelu:
    case OpKind::kLeakyRelu:
    case OpKind::kAbs: {
      const double slope = op == OpKind::kLeakyRelu ? attrs.alpha : 0.0;
      const Tensor& xv = g.value(x);
      Tensor mask(xv.shape());
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (op == OpKind::kAbs)
          mask[i] = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
        else
          mask[i] = xv[i] > 0.0 ? 1.0 : slope;
      }
      return ops::mul(g, gid, g.constant(std::move(mask)));
    }
    case OpKind::kSigmoid:
      return ops::mul(g, gid, ops::mul(g, id, ops::affine(g, id, -1.0, 1.0)));
    case OpKind::kSoftplus: return ops::mul(g, gid, ops::sigmoid(g, x));
    case OpKind::kLog: return ops::div(g, gid, x);
    case OpKind::kExp: return ops::mul(g, gid, id);
    case OpKind::kSqrt: return ops::div(g, gid, ops::scale(g, id, 2.0));
    case OpKind::kSum: return ops::broadcast(g, gid, in_shape);
    case OpKind::kMean:
      return ops::broadcast(g, ops::scale(g, gid, 1.0 / static_cast<double>(shape_numel(in_shape))),
                            in_shape);
    case OpKind::kBroadcast: return ops::reshape(g, ops::sum(g, gid), in_shape);
    case OpKind::kGather: return ops::scatter_add(g, gid, attrs.index, in_shape);
    case OpKind::kScatterAdd: return ops::gather(g, gid, attrs.index, in_shape);
    case OpKind::kMaxPool2d: return ops::scatter_add(g, gid, attrs.index, in_shape);
    case OpKind::kReshape: return ops::reshape(g, gid, in_shape);
    case OpKind::kConcat: {
      std::vector<std::size_t> widths;
      for (NodeId p : in) widths.push_back(g.shape(p)[attrs.axis]);
      return ops::gather(g, gid, concat_slice(g.shape(id), attrs.axis, widths, pos), in_shape);
    }
    case OpKind::kDropout: return ops::dropout(g, gid, attrs.mask);
    case OpKind::kLeaf:
    case OpKind::kConstant:
    case OpKind::kConv2d:
    case OpKind::kPad: break;
  }
  fail(ErrorCode::kInvalidArgument, "backward", std::string("no vjp for ") + op_name(op));
}

}  // namespace

GradMap backward(Graph& graph, NodeId root, bool differentiable, std::span<const NodeId> targets) {
  const std::size_t n = graph.size();
  if (root < 0 || static_cast<std::size_t>(root) >= n)
    fail(ErrorCode::kOutOfRange, "backward", "root id " + std::to_string(root));
  if (graph.value(root).size() != 1)
    fail(ErrorCode::kShapeMismatch, "backward",
         "root must be scalar, got " + shape_str(graph.shape(root)));

  const auto r = static_cast<std::size_t>(root);
  // Nodes that are ancestors of the root and carry gradient.
  std::vector<char> live(n, 0);
  live[r] = graph.node(root).requires_grad ? 1 : 0;
  for (std::size_t i = r + 1; i-- > 0;) {
    if (!live[i]) continue;
    for (NodeId j : graph.node(static_cast<NodeId>(i)).inputs)
      if (graph.node(j).requires_grad) live[static_cast<std::size_t>(j)] = 1;
  }
  if (!targets.empty()) {
    // Keep only nodes downstream of some target.
    std::vector<char> reach(n, 0);
    for (NodeId t : targets) {
      if (t < 0 || static_cast<std::size_t>(t) >= n)
        fail(ErrorCode::kOutOfRange, "backward", "target id " + std::to_string(t));
      reach[static_cast<std::size_t>(t)] = 1;
    }
    for (std::size_t i = 0; i <= r; ++i) {
      if (reach[i]) continue;
      for (NodeId j : graph.node(static_cast<NodeId>(i)).inputs)
        if (reach[static_cast<std::size_t>(j)]) {
          reach[i] = 1;
          break;
        }
    }
    for (std::size_t i = 0; i < n; ++i) live[i] = live[i] && reach[i];
  }

  std::vector<NodeId> adj(n, kNoNode);
  if (live[r]) adj[r] = graph.constant(Tensor::full(graph.shape(root), 1.0));
  for (std::size_t i = r + 1; i-- > 0;) {
    if (!live[i] || adj[i] == kNoNode) continue;
    const auto id = static_cast<NodeId>(i);
    const std::size_t nin = graph.node(id).inputs.size();
    for (std::size_t p = 0; p < nin; ++p) {
      const NodeId x = graph.node(id).inputs[p];
      if (!live[static_cast<std::size_t>(x)]) continue;
      const NodeId contrib = vjp(graph, id, p, adj[i]);
      adj[static_cast<std::size_t>(x)] = accumulate(graph, adj[static_cast<std::size_t>(x)], contrib);
    }
  }

  GradMap out;
  out.graph_ = &graph;
  out.differentiable_ = differentiable;
  out.shapes_.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.shapes_[i] = graph.shape(static_cast<NodeId>(i));
  if (differentiable) {
    out.grad_nodes_ = std::move(adj);
  } else {
    out.values_.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      if (adj[i] != kNoNode)
        out.values_[i] = std::make_shared<const Tensor>(graph.value(adj[i]));
    graph.truncate(n);
  }
  return out;
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double h) {
  if (!(h > 0.0)) fail(ErrorCode::kInvalidArgument, "finite_diff_gradient", "h must be > 0");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      fail(ErrorCode::kNonFinite, "finite_diff_gradient", "f not finite at coordinate " +
                                                              std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// index cache

namespace index_cache {
namespace {
std::mutex g_mu;
using Key = std::tuple<int, std::vector<std::size_t>>;
std::map<Key, IndexMap>& cache() {
  static std::map<Key, IndexMap> m;
  return m;
}

template <class Build>
IndexMap lookup(int kind, std::vector<std::size_t> key, Build build) {
  std::lock_guard lock(g_mu);
  auto& m = cache();
  Key k{kind, std::move(key)};
  auto it = m.find(k);
  if (it != m.end()) return it->second;
  IndexMap v = std::make_shared<const std::vector<kernels::Index>>(build());
  m.emplace(std::move(k), v);
  return v;
}
}  // namespace

IndexMap im2col(const kernels::ConvGeometry& g) {
  return lookup(0,
                {g.batch, g.channels, g.height, g.width, g.kernel_h, g.kernel_w, g.stride, g.pad},
                [&] { return kernels::im2col_index(g); });
}

IndexMap rows_to_nchw(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w) {
  return lookup(1, {batch, channels, h, w},
                [&] { return kernels::rows_to_nchw_index(batch, channels, h, w); });
}

IndexMap channel_broadcast(const Shape& shape) {
  return lookup(2, shape, [&] {
    const std::size_t c = shape[1];
    std::size_t inner = 1;
    for (std::size_t d = 2; d < shape.size(); ++d) inner *= shape[d];
    std::vector<kernels::Index> idx(shape_numel(shape));
    for (std::size_t i = 0; i < idx.size(); ++i)
      idx[i] = static_cast<kernels::Index>((i / inner) % c);
    return idx;
  });
}

IndexMap pad2d(const Shape& s, std::size_t pad) {
  std::vector<std::size_t> key = s;
  key.push_back(pad);
  return lookup(3, key, [&] {
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
    const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
    std::vector<kernels::Index> idx(planes * ph * pw, -1);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          idx[(p * ph + y + pad) * pw + x + pad] = static_cast<kernels::Index>((p * h + y) * w + x);
    return idx;
  });
}

IndexMap row_sum(std::size_t rows, std::size_t cols) {
  return lookup(4, {rows, cols}, [&] {
    std::vector<kernels::Index> idx(rows * cols);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<kernels::Index>(i / cols);
    return idx;
  });
}

}  // namespace index_cache

// ---------------------------------------------------------------------------
// builders

namespace ops {

namespace {
OpAttrs with_alpha(double a, double b = 0.0) {
  OpAttrs at;
  at.alpha = a;
  at.beta = b;
  return at;
}
OpAttrs with_shape(Shape s, IndexMap idx = nullptr) {
  OpAttrs at;
  at.shape = std::move(s);
  at.index = std::move(idx);
  return at;
}
}  // namespace

NodeId matmul(Graph& g, NodeId a, NodeId b, bool ta, bool tb) {
  OpAttrs at;
  at.trans_a = ta;
  at.trans_b = tb;
  return g.apply(OpKind::kMatMul, {a, b}, std::move(at));
}
NodeId add(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::kAdd, {a, b}); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::kSub, {a, b}); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::kMul, {a, b}); }
NodeId div(Graph& g, NodeId a, NodeId b) { return g.apply(OpKind::kDiv, {a, b}); }
NodeId scale(Graph& g, NodeId a, double s) { return g.apply(OpKind::kScale, {a}, with_alpha(s)); }
NodeId affine(Graph& g, NodeId a, double s, double c) {
  return g.apply(OpKind::kAffine, {a}, with_alpha(s, c));
}
NodeId relu(Graph& g, NodeId a) { return g.apply(OpKind::kRelu, {a}); }
NodeId leaky_relu(Graph& g, NodeId a, double slope) {
  return g.apply(OpKind::kLeakyRelu, {a}, with_alpha(slope));
}
NodeId sigmoid(Graph& g, NodeId a) { return g.apply(OpKind::kSigmoid, {a}); }
NodeId softplus(Graph& g, NodeId a) { return g.apply(OpKind::kSoftplus, {a}); }
NodeId log(Graph& g, NodeId a) { return g.apply(OpKind::kLog, {a}); }
NodeId exp(Graph& g, NodeId a) { return g.apply(OpKind::kExp, {a}); }
NodeId sqrt(Graph& g, NodeId a) { return g.apply(OpKind::kSqrt, {a}); }
NodeId abs(Graph& g, NodeId a) { return g.apply(OpKind::kAbs, {a}); }
NodeId sum(Graph& g, NodeId a) { return g.apply(OpKind::kSum, {a}); }
NodeId mean(Graph& g, NodeId a) { return g.apply(OpKind::kMean, {a}); }
NodeId broadcast(Graph& g, NodeId s, Shape shape) {
  return g.apply(OpKind::kBroadcast, {s}, with_shape(std::move(shape)));
}
NodeId gather(Graph& g, NodeId a, IndexMap index, Shape shape) {
  return g.apply(OpKind::kGather, {a}, with_shape(std::move(shape), std::move(index)));
}
NodeId scatter_add(Graph& g, NodeId a, IndexMap index, Shape shape) {
  return g.apply(OpKind::kScatterAdd, {a}, with_shape(std::move(shape), std::move(index)));
}
NodeId reshape(Graph& g, NodeId a, Shape shape) {
  if (g.shape(a) == shape) return a;
  return g.apply(OpKind::kReshape, {a}, with_shape(std::move(shape)));
}
NodeId concat(Graph& g, std::span<const NodeId> parts, std::size_t axis) {
  OpAttrs at;
  at.axis = axis;
  return g.apply(OpKind::kConcat, parts, std::move(at));
}
NodeId dropout(Graph& g, NodeId a, std::shared_ptr<const Tensor> keep_mask) {
  OpAttrs at;
  at.mask = std::move(keep_mask);
  return g.apply(OpKind::kDropout, {a}, std::move(at));
}
NodeId maxpool2d(Graph& g, NodeId x, std::size_t kernel, std::size_t stride) {
  OpAttrs at;
  at.geom.kernel_h = at.geom.kernel_w = kernel;
  at.geom.stride = stride;
  return g.apply(OpKind::kMaxPool2d, {x}, std::move(at));
}

NodeId pad2d(Graph& g, NodeId x, std::size_t pad) {
  const Shape s = g.shape(x);
  if (s.size() != 4) fail(ErrorCode::kShapeMismatch, "pad", "expects NCHW, got " + shape_str(s));
  if (pad == 0) return x;
  return gather(g, x, index_cache::pad2d(s, pad), {s[0], s[1], s[2] + 2 * pad, s[3] + 2 * pad});
}

NodeId add_channel_bias(Graph& g, NodeId x, NodeId bias) {
  const Shape s = g.shape(x);
  if (s.size() < 2 || g.shape(bias) != Shape{s[1]})
    fail(ErrorCode::kShapeMismatch, "bias",
         "x " + shape_str(s) + " bias " + shape_str(g.shape(bias)));
  return add(g, x, gather(g, bias, index_cache::channel_broadcast(s), s));
}

NodeId conv2d(Graph& g, NodeId x, NodeId w, NodeId bias, std::size_t stride, std::size_t pad) {
  const Shape xs = g.shape(x);
  const Shape ws = g.shape(w);
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1])
    fail(ErrorCode::kShapeMismatch, "conv2d", "x " + shape_str(xs) + " w " + shape_str(ws));
  kernels::ConvGeometry geom{xs[0], xs[1], xs[2], xs[3], ws[2], ws[3], stride, pad};
  if (!geom.valid())
    fail(ErrorCode::kShapeMismatch, "conv2d", "kernel does not fit: x " + shape_str(xs));
  const std::size_t cout = ws[0];
  const NodeId cols = gather(g, x, index_cache::im2col(geom), {geom.rows(), geom.cols()});
  const NodeId w2 = reshape(g, w, {cout, geom.cols()});
  const NodeId rows = matmul(g, cols, w2, false, true);
  NodeId out = gather(g, rows, index_cache::rows_to_nchw(xs[0], cout, geom.out_h(), geom.out_w()),
                      {xs[0], cout, geom.out_h(), geom.out_w()});
  if (bias != kNoNode) out = add_channel_bias(g, out, bias);
  return out;
}

NodeId conv_transpose2d(Graph& g, NodeId x, NodeId w, NodeId bias, std::size_t stride,
                        std::size_t pad) {
  const Shape xs = g.shape(x);
  const Shape ws = g.shape(w);
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != xs[1])
    fail(ErrorCode::kShapeMismatch, "conv_transpose2d",
         "x " + shape_str(xs) + " w " + shape_str(ws));
  const std::size_t cin = xs[1], cout = ws[1], k = ws[2];
  const std::size_t oh = (xs[2] - 1) * stride + k - 2 * pad;
  const std::size_t ow = (xs[3] - 1) * stride + k - 2 * pad;
  // The forward conv this is the adjoint of maps [B,cout,oh,ow] -> [B,cin,H,W].
  kernels::ConvGeometry geom{xs[0], cout, oh, ow, k, ws[3], stride, pad};
  if (!geom.valid() || geom.out_h() != xs[2] || geom.out_w() != xs[3])
    fail(ErrorCode::kShapeMismatch, "conv_transpose2d", "geometry does not invert");
  // x (NCHW) -> rows [(b,h,w), cin]
  const NodeId rows = scatter_add(g, x, index_cache::rows_to_nchw(xs[0], cin, xs[2], xs[3]),
                                  {geom.rows(), cin});
  const NodeId w2 = reshape(g, w, {cin, geom.cols()});
  const NodeId cols = matmul(g, rows, w2);
  NodeId out = scatter_add(g, cols, index_cache::im2col(geom), {xs[0], cout, oh, ow});
  if (bias != kNoNode) out = add_channel_bias(g, out, bias);
  return out;
}

NodeId dot(Graph& g, NodeId a, NodeId b) { return sum(g, mul(g, a, b)); }

NodeId row_sum(Graph& g, NodeId a) {
  const Shape s = g.shape(a);
  if (s.size() != 2) fail(ErrorCode::kShapeMismatch, "row_sum", shape_str(s));
  return scatter_add(g, a, index_cache::row_sum(s[0], s[1]), {s[0]});
}

NodeId expand_rows(Graph& g, NodeId r, std::size_t cols) {
  const Shape s = g.shape(r);
  if (s.size() != 1) fail(ErrorCode::kShapeMismatch, "expand_rows", shape_str(s));
  return gather(g, r, index_cache::row_sum(s[0], cols), {s[0], cols});
}

}  // namespace ops

}  // namespace gleak
