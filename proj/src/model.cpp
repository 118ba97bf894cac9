// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/model.hpp"

#include <algorithm>
#include <cmath>

#include "gleak/error.hpp"
#include "gleak/rng.hpp"

namespace gleak {

namespace {

const NinBlock& find_block(const ModelSpec& spec, std::size_t id) {
  for (const auto& b : spec.nin_blocks)
    if (b.block_id == id) return b;
  fail(ErrorCode::kInvalidSpec, "nin", "unknown nin block " + std::to_string(id));
}

std::string layer_ctx(std::size_t i) { return "layer " + std::to_string(i); }

Shape layer_output(const ModelSpec& spec, std::size_t i, const Shape& in) {
  const LayerSpec& l = spec.layers[i];
  auto need_rank = [&](std::size_t r) {
    if (in.size() != r)
      fail(ErrorCode::kInvalidSpec, layer_ctx(i),
           to_string(l.kind) + " expects rank " + std::to_string(r) + " input, got " +
               shape_str(in));
  };
  switch (l.kind) {
    case LayerKind::kConv: {
      need_rank(3);
      if (l.width == 0 || l.kernel == 0 || l.stride == 0)
        fail(ErrorCode::kInvalidSpec, layer_ctx(i), "conv needs width, kernel, stride > 0");
      if (in[1] + 2 * l.padding < l.kernel || in[2] + 2 * l.padding < l.kernel)
        fail(ErrorCode::kInvalidSpec, layer_ctx(i), "kernel larger than padded input");
      return {l.width, (in[1] + 2 * l.padding - l.kernel) / l.stride + 1,
              (in[2] + 2 * l.padding - l.kernel) / l.stride + 1};
    }
    case LayerKind::kLinear:
      need_rank(1);
      if (l.width == 0) fail(ErrorCode::kInvalidSpec, layer_ctx(i), "linear width 0");
      return {l.width};
    case LayerKind::kMaxPool:
      need_rank(3);
      if (l.pool == 0 || in[1] < l.pool || in[2] < l.pool)
        fail(ErrorCode::kInvalidSpec, layer_ctx(i), "pool window does not fit");
      return {in[0], (in[1] - l.pool) / l.pool + 1, (in[2] - l.pool) / l.pool + 1};
    case LayerKind::kGlobalAvgPool:
      need_rank(3);
      return {in[0]};
    case LayerKind::kFlatten: return {shape_numel(in)};
    case LayerKind::kDropout:
      if (!(l.dropout >= 0.0 && l.dropout < 1.0))
        fail(ErrorCode::kInvalidSpec, layer_ctx(i), "dropout rate must lie in [0, 1)");
      return in;
    case LayerKind::kNin: {
      need_rank(3);
      const NinBlock& b = find_block(spec, l.nin_block);
      if (b.kernels.empty() || l.width == 0)
        fail(ErrorCode::kInvalidSpec, layer_ctx(i), "nin block needs kernels and width");
      for (auto k : b.kernels)
        if (k % 2 == 0) fail(ErrorCode::kInvalidSpec, layer_ctx(i), "nin kernels must be odd");
      return {l.width * b.kernels.size(), in[1], in[2]};
    }
  }
  fail(ErrorCode::kInvalidSpec, layer_ctx(i), "unknown layer kind");
}

// Shapes of every activation a_0..a_L and of every layer input.
struct ShapePlan {
  std::vector<Shape> activations;
  std::vector<Shape> inputs;
};

ShapePlan plan(const ModelSpec& spec) {
  if (spec.layers.empty()) fail(ErrorCode::kInvalidSpec, "model", "no layers");
  if (spec.input_shape.empty() || shape_numel(spec.input_shape) == 0)
    fail(ErrorCode::kInvalidSpec, "model", "empty input shape");
  const std::size_t n = spec.layers.size();
  for (std::size_t s = 0; s < spec.skip_connections.size(); ++s) {
    const auto& sk = spec.skip_connections[s];
    const std::string ctx = "skip " + std::to_string(s);
    if (sk.to >= n) fail(ErrorCode::kInvalidSpec, ctx, "target layer out of range");
    if (sk.mode == SkipMode::kAdd ? sk.from > sk.to : sk.from >= sk.to)
      fail(ErrorCode::kInvalidSpec, ctx, "skip must point forward");
  }
  ShapePlan p;
  p.activations.push_back(spec.input_shape);
  for (std::size_t i = 0; i < n; ++i) {
    Shape in = p.activations[i];
    for (std::size_t s = 0; s < spec.skip_connections.size(); ++s) {
      const auto& sk = spec.skip_connections[s];
      if (!sk.enabled || sk.to != i || sk.mode != SkipMode::kConcat) continue;
      const Shape& src = p.activations[sk.from];
      bool ok = src.size() == in.size();
      for (std::size_t d = 1; ok && d < in.size(); ++d) ok = src[d] == in[d];
      if (!ok)
        fail(ErrorCode::kInvalidSpec, "skip " + std::to_string(s),
             "concat needs matching spatial dims: " + shape_str(src) + " vs " + shape_str(in));
      in[0] += src[0];
    }
    Shape out = layer_output(spec, i, in);
    for (std::size_t s = 0; s < spec.skip_connections.size(); ++s) {
      const auto& sk = spec.skip_connections[s];
      if (!sk.enabled || sk.to != i || sk.mode != SkipMode::kAdd) continue;
      if (p.activations[sk.from] != out)
        fail(ErrorCode::kInvalidSpec, "skip " + std::to_string(s),
             "add needs matching shapes: " + shape_str(p.activations[sk.from]) + " vs " +
                 shape_str(out));
    }
    p.inputs.push_back(std::move(in));
    p.activations.push_back(std::move(out));
  }
  if (p.activations.back() != Shape{spec.num_classes})
    fail(ErrorCode::kInvalidSpec, "model",
         "output " + shape_str(p.activations.back()) + " differs from num_classes " +
             std::to_string(spec.num_classes));
  return p;
}

NodeId activate(Graph& g, NodeId x, const LayerSpec& l) {
  switch (l.activation) {
    case Activation::kNone: return x;
    case Activation::kRelu: return ops::relu(g, x);
    case Activation::kLeakyRelu: return ops::leaky_relu(g, x, l.slope);
    case Activation::kSigmoid: return ops::sigmoid(g, x);
    case Activation::kSoftplus: return ops::softplus(g, x);
    case Activation::kTanh:
      return ops::affine(g, ops::sigmoid(g, ops::scale(g, x, 2.0)), 2.0, -1.0);
  }
  return x;
}

}  // namespace

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  ShapePlan p = plan(spec);
  std::vector<Shape> out = std::move(p.inputs);
  out.push_back(std::move(p.activations.back()));
  return out;
}

void validate(const ModelSpec& spec) { (void)plan(spec); }

std::vector<std::vector<Shape>> parameter_shapes(const ModelSpec& spec) {
  const ShapePlan p = plan(spec);
  std::vector<std::vector<Shape>> out(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape& in = p.inputs[i];
    switch (l.kind) {
      case LayerKind::kConv:
        out[i].push_back({l.width, in[0], l.kernel, l.kernel});
        if (l.bias) out[i].push_back({l.width});
        break;
      case LayerKind::kLinear:
        out[i].push_back({l.width, in[0]});
        if (l.bias) out[i].push_back({l.width});
        break;
      case LayerKind::kNin:
        for (auto k : find_block(spec, l.nin_block).kernels) {
          out[i].push_back({l.width, in[0], k, k});
          if (l.bias) out[i].push_back({l.width});
        }
        break;
      default: break;
    }
  }
  return out;
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& layer : parameter_shapes(spec))
    for (const auto& s : layer) n += shape_numel(s);
  return n;
}

std::vector<std::size_t> parameterized_layers(const ModelSpec& spec) {
  std::vector<std::size_t> out;
  const auto shapes = parameter_shapes(spec);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (!shapes[i].empty()) out.push_back(i);
  return out;
}

ModelState build_model(const ModelSpec& spec, InitScheme init, std::uint64_t seed) {
  const auto shapes = parameter_shapes(spec);
  ModelState st;
  st.params.resize(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    // Tensors come in (W, optional b) groups; b shares its W's fan-in.
    std::size_t fan_in = 1;
    for (std::size_t t = 0; t < shapes[i].size(); ++t) {
      const Shape& s = shapes[i][t];
      if (s.size() > 1) fan_in = shape_numel(s) / s[0];
      Tensor p(s);
      if (init == InitScheme::kUniformFanIn) {
        auto rng = make_rng({seed, tag(Stream::kInit), i, t});
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : p.data()) v = u(rng);
      }
      st.params[i].push_back(std::move(p));
    }
  }
  return st;
}

Tensor flatten(const ModelState& state) {
  std::vector<Tensor> all;
  for (const auto& layer : state.params)
    for (const auto& t : layer) all.push_back(t);
  return concat_flat(all);
}

ModelState unflatten(const ModelSpec& spec, const Tensor& flat) {
  const auto shapes = parameter_shapes(spec);
  std::size_t total = 0;
  for (const auto& layer : shapes)
    for (const auto& s : layer) total += shape_numel(s);
  if (flat.size() != total)
    fail(ErrorCode::kShapeMismatch, "unflatten",
         "expected " + std::to_string(total) + " values, got " + std::to_string(flat.size()));
  ModelState st;
  st.params.resize(shapes.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    for (const auto& s : shapes[i]) {
      const std::size_t n = shape_numel(s);
      std::vector<double> v(flat.data().begin() + static_cast<std::ptrdiff_t>(off),
                            flat.data().begin() + static_cast<std::ptrdiff_t>(off + n));
      st.params[i].emplace_back(s, std::move(v));
      off += n;
    }
  return st;
}

std::vector<std::pair<std::size_t, std::size_t>> layer_offsets(const ModelSpec& spec) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t off = 0;
  for (const auto& layer : parameter_shapes(spec)) {
    std::size_t n = 0;
    for (const auto& s : layer) n += shape_numel(s);
    out.emplace_back(off, off + n);
    off += n;
  }
  return out;
}

BoundParams bind_params(Graph& graph, const ModelState& state, bool as_leaves) {
  BoundParams out(state.params.size());
  for (std::size_t i = 0; i < state.params.size(); ++i)
    for (const auto& t : state.params[i])
      out[i].push_back(as_leaves ? graph.leaf(t) : graph.constant(t));
  return out;
}

std::vector<NodeId> flat_nodes(const BoundParams& params) {
  std::vector<NodeId> out;
  for (const auto& layer : params) out.insert(out.end(), layer.begin(), layer.end());
  return out;
}

BoundParams regroup(const ModelSpec& spec, std::span<const NodeId> flat) {
  const auto shapes = parameter_shapes(spec);
  BoundParams out(shapes.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    for (std::size_t t = 0; t < shapes[i].size(); ++t) {
      if (k >= flat.size()) fail(ErrorCode::kShapeMismatch, "regroup", "too few nodes");
      out[i].push_back(flat[k++]);
    }
  if (k != flat.size()) fail(ErrorCode::kShapeMismatch, "regroup", "too many nodes");
  return out;
}

ForwardTrace forward(const ModelSpec& spec, const BoundParams& params, NodeId x, Graph& graph,
                     const ForwardOptions& options) {
  const ShapePlan p = plan(spec);
  const Shape& xs = graph.shape(x);
  if (xs.size() != spec.input_shape.size() + 1 ||
      !std::equal(spec.input_shape.begin(), spec.input_shape.end(), xs.begin() + 1))
    fail(ErrorCode::kShapeMismatch, "forward",
         "input " + shape_str(xs) + " vs per-sample " + shape_str(spec.input_shape));
  if (params.size() != spec.layers.size())
    fail(ErrorCode::kShapeMismatch, "forward", "parameter groups differ from layers");
  const std::size_t batch = xs[0];

  ForwardTrace tr;
  tr.activations.push_back(x);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    NodeId in = tr.activations[i];
    std::vector<NodeId> parts{in};
    for (const auto& sk : spec.skip_connections)
      if (sk.enabled && sk.to == i && sk.mode == SkipMode::kConcat)
        parts.push_back(tr.activations[sk.from]);
    if (parts.size() > 1) in = ops::concat(graph, parts, 1);

    const auto& w = params[i];
    NodeId pre = kNoNode;
    switch (l.kind) {
      case LayerKind::kConv:
        pre = ops::conv2d(graph, in, w.at(0), l.bias ? w.at(1) : kNoNode, l.stride, l.padding);
        break;
      case LayerKind::kLinear:
        pre = ops::matmul(graph, in, w.at(0), false, true);
        if (l.bias) pre = ops::add_channel_bias(graph, pre, w.at(1));
        break;
      case LayerKind::kMaxPool: pre = ops::maxpool2d(graph, in, l.pool, l.pool); break;
      case LayerKind::kGlobalAvgPool: {
        const Shape& s = graph.shape(in);
        const std::size_t hw = s[2] * s[3];
        const NodeId rows = ops::reshape(graph, in, {s[0] * s[1], hw});
        pre = ops::reshape(graph, ops::scale(graph, ops::row_sum(graph, rows),
                                             1.0 / static_cast<double>(hw)),
                           {s[0], s[1]});
        break;
      }
      case LayerKind::kFlatten:
        pre = ops::reshape(graph, in, {batch, shape_numel(p.inputs[i])});
        break;
      case LayerKind::kDropout:
        if (options.dropout_rng && l.dropout > 0.0) {
          auto mask = std::make_shared<Tensor>(graph.shape(in));
          std::bernoulli_distribution keep(1.0 - l.dropout);
          const double s = 1.0 / (1.0 - l.dropout);
          for (auto& v : mask->data()) v = keep(*options.dropout_rng) ? s : 0.0;
          pre = ops::dropout(graph, in, std::move(mask));
        } else {
          pre = in;
        }
        break;
      case LayerKind::kNin: {
        const NinBlock& b = find_block(spec, l.nin_block);
        std::vector<NodeId> branches;
        const std::size_t per = l.bias ? 2 : 1;
        for (std::size_t j = 0; j < b.kernels.size(); ++j)
          branches.push_back(ops::conv2d(graph, in, w.at(j * per),
                                         l.bias ? w.at(j * per + 1) : kNoNode, 1,
                                         (b.kernels[j] - 1) / 2));
        pre = branches.size() == 1 ? branches[0] : ops::concat(graph, branches, 1);
        break;
      }
    }
    for (const auto& sk : spec.skip_connections)
      if (sk.enabled && sk.to == i && sk.mode == SkipMode::kAdd)
        pre = ops::add(graph, pre, tr.activations[sk.from]);
    tr.activations.push_back(activate(graph, pre, l));
  }
  tr.logits = tr.activations.back();
  return tr;
}

LossKind default_loss(const ModelSpec& spec) {
  return spec.num_classes == 1 ? LossKind::kBinaryLogistic : LossKind::kCrossEntropy;
}

NodeId loss(Graph& g, NodeId logits, const Labels& labels, LossKind kind) {
  const Shape s = g.shape(logits);
  if (s.size() != 2 || s[0] != labels.size())
    fail(ErrorCode::kShapeMismatch, "loss",
         "logits " + shape_str(s) + " for " + std::to_string(labels.size()) + " labels");
  const std::size_t b = s[0], c = s[1];
  if (kind == LossKind::kBinaryLogistic) {
    if (c != 1) fail(ErrorCode::kShapeMismatch, "loss", "binary logistic needs one logit");
    Tensor y({b});
    for (std::size_t i = 0; i < b; ++i) {
      if (labels[i] != 1 && labels[i] != -1)
        fail(ErrorCode::kInvalidArgument, "loss", "binary labels must be +1 or -1");
      y[i] = -static_cast<double>(labels[i]);
    }
    // log(1 + exp(-y mu))
    const NodeId mu = ops::reshape(g, logits, {b});
    return ops::mean(g, ops::softplus(g, ops::mul(g, mu, g.constant(std::move(y)))));
  }
  auto idx = std::make_shared<std::vector<kernels::Index>>(b);
  Tensor shift({b});
  const Tensor& z = g.value(logits);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      fail(ErrorCode::kInvalidArgument, "loss", "class index out of range");
    (*idx)[i] = static_cast<kernels::Index>(i * c + static_cast<std::size_t>(labels[i]));
    double m = z[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, z[i * c + j]);
    shift[i] = m;
  }
  // logsumexp with a constant per-row shift; the shift cancels in value and gradient.
  const NodeId m = g.constant(shift);
  const NodeId e = ops::exp(g, ops::sub(g, logits, ops::expand_rows(g, m, c)));
  const NodeId lse = ops::add(g, ops::log(g, ops::row_sum(g, e)), m);
  const NodeId picked = ops::gather(g, logits, std::move(idx), {b});
  return ops::mean(g, ops::sub(g, lse, picked));
}

LossGradient loss_gradient(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                           const Labels& labels, const ForwardOptions& options) {
  Graph g;
  const BoundParams p = bind_params(g, state, true);
  const NodeId xn = g.constant(x);
  const NodeId l = loss(g, forward(spec, p, xn, g, options).logits, labels, default_loss(spec));
  const double value = g.value(l).item();
  if (!std::isfinite(value)) fail(ErrorCode::kNonFinite, "loss_gradient", "loss is not finite");
  const std::vector<NodeId> leaves = flat_nodes(p);
  const GradMap gm = backward(g, l, false, leaves);
  std::vector<Tensor> parts;
  parts.reserve(leaves.size());
  for (NodeId id : leaves) parts.push_back(gm.tensor(id));
  return {concat_flat(parts), value};
}

Tensor predict(const ModelSpec& spec, const ModelState& state, const Tensor& x) {
  Graph g;
  const BoundParams p = bind_params(g, state, false);
  return g.value(forward(spec, p, g.constant(x), g).logits);
}

ModelSpec cut_skip(const ModelSpec& spec, std::size_t connection_id) {
  if (connection_id >= spec.skip_connections.size())
    fail(ErrorCode::kInvalidArgument, "cut_skip",
         "unknown connection " + std::to_string(connection_id));
  ModelSpec out = spec;
  out.skip_connections[connection_id].enabled = false;
  validate(out);
  return out;
}

namespace {

ModelSpec remove_layers(const ModelSpec& spec, LayerKind kind, const char* what) {
  ModelSpec out = spec;
  bool any = false;
  for (std::size_t i = out.layers.size(); i-- > 0;) {
    if (out.layers[i].kind != kind) continue;
    any = true;
    for (auto& sk : out.skip_connections) {
      if (sk.to == i)
        fail(ErrorCode::kInvalidArgument, what, "a skip connection targets the removed layer");
      if (sk.to > i) --sk.to;
      if (sk.from > i) --sk.from;
    }
    out.layers.erase(out.layers.begin() + static_cast<std::ptrdiff_t>(i));
  }
  if (!any) fail(ErrorCode::kInvalidArgument, what, "model has no such layer");
  return out;
}

}  // namespace

ModelSpec apply_micro_mod(const ModelSpec& spec, const MicroModification& mod) {
  const std::string ctx = to_string(mod.kind);
  ModelSpec out = spec;
  bool any = false;
  switch (mod.kind) {
    case MicroMod::kRemoveRelu:
      for (auto& l : out.layers)
        if (l.activation == Activation::kRelu) {
          l.activation = Activation::kNone;
          any = true;
        }
      break;
    case MicroMod::kRemoveDropout: out = remove_layers(spec, LayerKind::kDropout, ctx.c_str()); any = true; break;
    case MicroMod::kRemoveMaxpool: out = remove_layers(spec, LayerKind::kMaxPool, ctx.c_str()); any = true; break;
    case MicroMod::kRemoveBias:
      for (auto& l : out.layers)
        if ((l.kind == LayerKind::kConv || l.kind == LayerKind::kLinear ||
             l.kind == LayerKind::kNin) && l.bias) {
          l.bias = false;
          any = true;
        }
      break;
    case MicroMod::kSetKernel:
    case MicroMod::kSetPadding:
      if (mod.kind == MicroMod::kSetKernel && mod.value == 0)
        fail(ErrorCode::kInvalidArgument, ctx, "kernel must be positive");
      for (auto& l : out.layers)
        if (l.kind == LayerKind::kConv) {
          (mod.kind == MicroMod::kSetKernel ? l.kernel : l.padding) = mod.value;
          any = true;
        }
      break;
  }
  if (!any) fail(ErrorCode::kInvalidArgument, ctx, "not applicable to this model");
  validate(out);
  return out;
}

}  // namespace gleak
