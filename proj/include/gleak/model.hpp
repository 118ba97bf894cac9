// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gleak/graph.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

enum class Family { kMlp, kConvnet, kResnetLike, kDensenetLike, kNinNet };
enum class LayerKind { kConv, kLinear, kMaxPool, kGlobalAvgPool, kFlatten, kDropout, kNin };
enum class Activation { kNone, kRelu, kLeakyRelu, kSigmoid, kSoftplus, kTanh };
enum class SkipMode { kAdd, kConcat };
enum class LossKind { kBinaryLogistic, kCrossEntropy };

struct LayerSpec {
  LayerKind kind = LayerKind::kLinear;
  std::size_t width = 0;  // conv output channels, linear units, per-branch nin channels
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  Activation activation = Activation::kNone;
  double slope = 0.2;  // leaky relu
  bool bias = true;
  double dropout = 0.0;
  std::size_t pool = 2;  // maxpool window == stride
  std::size_t nin_block = 0;

  bool operator==(const LayerSpec&) const = default;
};

/// `from` indexes activations: 0 is the network input, i + 1 is the output of
/// layer i. Add mode adds a_from to the pre-activation of layer `to`; concat
/// mode appends a_from to the input of layer `to` along the channel axis.
struct SkipConnection {
  std::size_t from = 0;
  std::size_t to = 0;
  SkipMode mode = SkipMode::kAdd;
  bool enabled = true;

  bool operator==(const SkipConnection&) const = default;
};

struct NinBlock {
  std::size_t block_id = 0;
  std::vector<std::size_t> kernels;  // odd sizes, padded to keep spatial dims

  bool operator==(const NinBlock&) const = default;
};

struct ModelSpec {
  Family family = Family::kMlp;
  std::vector<LayerSpec> layers;
  std::vector<SkipConnection> skip_connections;
  std::vector<NinBlock> nin_blocks;
  Shape input_shape;  // per sample, without batch
  std::size_t num_classes = 1;

  bool operator==(const ModelSpec&) const = default;
};

/// Per-layer parameters in spec order. Conv/linear layers hold {W} or {W, b};
/// NIN layers hold {W_0, b_0, W_1, b_1, ...} per branch; other layers none.
struct ModelState {
  std::vector<std::vector<Tensor>> params;

  bool operator==(const ModelState&) const = default;
};

enum class InitScheme { kUniformFanIn, kZero };

/// Validates the spec and returns the per-sample input shape of every layer
/// (after concat skips) followed by the output shape.
std::vector<Shape> infer_shapes(const ModelSpec& spec);
void validate(const ModelSpec& spec);

/// Parameter tensor shapes per layer.
std::vector<std::vector<Shape>> parameter_shapes(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);
/// Indices of layers that own parameters, shallow to deep.
std::vector<std::size_t> parameterized_layers(const ModelSpec& spec);

ModelState build_model(const ModelSpec& spec, InitScheme init, std::uint64_t seed);

Tensor flatten(const ModelState& state);
ModelState unflatten(const ModelSpec& spec, const Tensor& flat);
/// [begin, end) of every layer's parameters inside the flat vector.
std::vector<std::pair<std::size_t, std::size_t>> layer_offsets(const ModelSpec& spec);

using BoundParams = std::vector<std::vector<NodeId>>;

/// Adds every parameter tensor to `graph`, as leaves or constants.
BoundParams bind_params(Graph& graph, const ModelState& state, bool as_leaves);
std::vector<NodeId> flat_nodes(const BoundParams& params);
/// Regroups a flat node list (e.g. gradients) into the per-layer layout.
BoundParams regroup(const ModelSpec& spec, std::span<const NodeId> flat);

struct ForwardOptions {
  std::mt19937_64* dropout_rng = nullptr;  // null: eval mode, dropout is identity
};

struct ForwardTrace {
  NodeId logits = kNoNode;
  std::vector<NodeId> activations;  // a_0 .. a_L
};

/// Forward pass of a batch x [B, input_shape...]. Returns logits [B, classes].
ForwardTrace forward(const ModelSpec& spec, const BoundParams& params, NodeId x, Graph& graph,
                     const ForwardOptions& options = {});

/// Labels: +-1 for binary_logistic, class indices for cross_entropy.
using Labels = std::vector<int>;

/// Mean loss over the batch.
NodeId loss(Graph& graph, NodeId logits, const Labels& labels, LossKind kind);

/// Loss kind implied by the head width: 1 output means binary logistic.
LossKind default_loss(const ModelSpec& spec);

/// Flat gradient of the mean loss at (x, y) and the loss value.
struct LossGradient {
  Tensor gradient;
  double loss = 0.0;
};
LossGradient loss_gradient(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                           const Labels& labels, const ForwardOptions& options = {});

/// Logits values for a batch, eval mode.
Tensor predict(const ModelSpec& spec, const ModelState& state, const Tensor& x);

ModelSpec cut_skip(const ModelSpec& spec, std::size_t connection_id);

enum class MicroMod { kRemoveRelu, kRemoveDropout, kRemoveMaxpool, kRemoveBias, kSetKernel, kSetPadding };
struct MicroModification {
  MicroMod kind = MicroMod::kRemoveRelu;
  std::size_t value = 0;  // kernel or padding
};
ModelSpec apply_micro_mod(const ModelSpec& spec, const MicroModification& mod);

std::string to_string(Family f);
std::string to_string(LayerKind k);
std::string to_string(Activation a);
std::string to_string(SkipMode m);
std::string to_string(MicroMod m);
Family family_from_string(const std::string& s);
MicroModification micro_mod_from_string(const std::string& s);

std::string to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

// Desk-scale presets. Input shapes exclude the batch dimension.
ModelSpec mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                   std::size_t num_classes, Activation act, bool bias = true);
struct ConvnetOptions {
  std::size_t channels = 8;
  std::size_t conv_layers = 2;
  Activation activation = Activation::kRelu;
  bool maxpool = true;
  double dropout = 0.25;
  bool global_pool = false;  // GAP head instead of flatten
};
ModelSpec convnet_spec(const Shape& input_shape, std::size_t num_classes,
                       const ConvnetOptions& options = {});
ModelSpec resnet_like_spec(const Shape& input_shape, std::size_t num_classes,
                           std::size_t blocks = 2, std::size_t channels = 8);
ModelSpec densenet_like_spec(const Shape& input_shape, std::size_t num_classes,
                             std::size_t layers_per_block = 3, std::size_t growth = 4,
                             std::size_t blocks = 1);
/// variant 1 disables every second concat skip per block; variant 2 keeps only
/// the adjacent-layer path.
ModelSpec densenet_cut_variant(const ModelSpec& spec, int variant);
ModelSpec nin_net_spec(const Shape& input_shape, std::size_t num_classes,
                       const std::vector<std::vector<std::size_t>>& block_kernels,
                       std::size_t branch_channels = 4);

}  // namespace gleak
