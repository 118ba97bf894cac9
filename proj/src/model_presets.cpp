// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <json.hpp>

#include "gleak/error.hpp"
#include "gleak/model.hpp"

namespace gleak {

namespace {

template <class E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<E, const char*>, N>& table,
             const char* what) {
  for (const auto& [e, name] : table)
    if (s == name) return e;
  fail(ErrorCode::kConfig, what, "unknown value '" + s + "'");
}

template <class E, std::size_t N>
std::string enum_name(E e, const std::array<std::pair<E, const char*>, N>& table) {
  for (const auto& [v, name] : table)
    if (v == e) return name;
  return "unknown";
}

constexpr std::array<std::pair<Family, const char*>, 5> kFamilies{{
    {Family::kMlp, "mlp"},
    {Family::kConvnet, "convnet"},
    {Family::kResnetLike, "resnet_like"},
    {Family::kDensenetLike, "densenet_like"},
    {Family::kNinNet, "nin_net"},
}};
constexpr std::array<std::pair<LayerKind, const char*>, 7> kKinds{{
    {LayerKind::kConv, "conv2d"},
    {LayerKind::kLinear, "linear"},
    {LayerKind::kMaxPool, "maxpool"},
    {LayerKind::kGlobalAvgPool, "global_avgpool"},
    {LayerKind::kFlatten, "flatten"},
    {LayerKind::kDropout, "dropout"},
    {LayerKind::kNin, "nin"},
}};
constexpr std::array<std::pair<Activation, const char*>, 6> kActs{{
    {Activation::kNone, "none"},
    {Activation::kRelu, "relu"},
    {Activation::kLeakyRelu, "leaky_relu"},
    {Activation::kSigmoid, "sigmoid"},
    {Activation::kSoftplus, "softplus"},
    {Activation::kTanh, "tanh"},
}};
constexpr std::array<std::pair<SkipMode, const char*>, 2> kModes{{
    {SkipMode::kAdd, "add"},
    {SkipMode::kConcat, "concat"},
}};
constexpr std::array<std::pair<MicroMod, const char*>, 6> kMods{{
    {MicroMod::kRemoveRelu, "remove_relu"},
    {MicroMod::kRemoveDropout, "remove_dropout"},
    {MicroMod::kRemoveMaxpool, "remove_maxpool"},
    {MicroMod::kRemoveBias, "remove_bias"},
    {MicroMod::kSetKernel, "set_kernel"},
    {MicroMod::kSetPadding, "set_padding"},
}};

LayerSpec conv(std::size_t width, Activation act, std::size_t kernel = 3, std::size_t pad = 1) {
  LayerSpec l;
  l.kind = LayerKind::kConv;
  l.width = width;
  l.kernel = kernel;
  l.padding = pad;
  l.activation = act;
  return l;
}

LayerSpec simple(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

LayerSpec linear(std::size_t width, Activation act, bool bias = true) {
  LayerSpec l;
  l.kind = LayerKind::kLinear;
  l.width = width;
  l.activation = act;
  l.bias = bias;
  return l;
}

}  // namespace

std::string to_string(Family f) { return enum_name(f, kFamilies); }
std::string to_string(LayerKind k) { return enum_name(k, kKinds); }
std::string to_string(Activation a) { return enum_name(a, kActs); }
std::string to_string(SkipMode m) { return enum_name(m, kModes); }
std::string to_string(MicroMod m) { return enum_name(m, kMods); }
Family family_from_string(const std::string& s) { return parse_enum(s, kFamilies, "family"); }

MicroModification micro_mod_from_string(const std::string& s) {
  // "set_kernel(1)" / "set_padding(0)" carry an argument.
  const auto open = s.find('(');
  MicroModification m;
  m.kind = parse_enum(s.substr(0, open), kMods, "micro_mod");
  if (m.kind == MicroMod::kSetKernel || m.kind == MicroMod::kSetPadding) {
    if (open == std::string::npos || s.back() != ')')
      fail(ErrorCode::kConfig, "micro_mod", "'" + s + "' needs an argument");
    m.value = std::stoul(s.substr(open + 1, s.size() - open - 2));
  }
  return m;
}

std::string to_json(const ModelSpec& spec) {
  using nlohmann::json;
  json j;
  j["family"] = to_string(spec.family);
  j["input_shape"] = spec.input_shape;
  j["num_classes"] = spec.num_classes;
  j["layers"] = json::array();
  for (const auto& l : spec.layers)
    j["layers"].push_back({{"kind", to_string(l.kind)},
                           {"width", l.width},
                           {"kernel", l.kernel},
                           {"stride", l.stride},
                           {"padding", l.padding},
                           {"activation", to_string(l.activation)},
                           {"slope", l.slope},
                           {"bias", l.bias},
                           {"dropout", l.dropout},
                           {"pool", l.pool},
                           {"nin_block", l.nin_block}});
  j["skip_connections"] = json::array();
  for (const auto& s : spec.skip_connections)
    j["skip_connections"].push_back({{"from_layer", s.from},
                                     {"to_layer", s.to},
                                     {"mode", to_string(s.mode)},
                                     {"enabled", s.enabled}});
  j["nin_blocks"] = json::array();
  for (const auto& b : spec.nin_blocks)
    j["nin_blocks"].push_back({{"block_id", b.block_id}, {"kernels", b.kernels}});
  return j.dump(2);
}

ModelSpec model_spec_from_json(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "model_spec", e.what());
  }
  ModelSpec spec;
  try {
    spec.family = family_from_string(j.at("family").get<std::string>());
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    const LayerSpec d;
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_enum(lj.at("kind").get<std::string>(), kKinds, "layer kind");
      l.width = lj.value("width", d.width);
      l.kernel = lj.value("kernel", d.kernel);
      l.stride = lj.value("stride", d.stride);
      l.padding = lj.value("padding", d.padding);
      l.activation = parse_enum(lj.value("activation", std::string("none")), kActs, "activation");
      l.slope = lj.value("slope", d.slope);
      l.bias = lj.value("bias", d.bias);
      l.dropout = lj.value("dropout", d.dropout);
      l.pool = lj.value("pool", d.pool);
      l.nin_block = lj.value("nin_block", d.nin_block);
      spec.layers.push_back(l);
    }
    for (const auto& sj : j.value("skip_connections", json::array())) {
      SkipConnection s;
      s.from = sj.at("from_layer").get<std::size_t>();
      s.to = sj.at("to_layer").get<std::size_t>();
      s.mode = parse_enum(sj.at("mode").get<std::string>(), kModes, "skip mode");
      s.enabled = sj.value("enabled", true);
      spec.skip_connections.push_back(s);
    }
    for (const auto& bj : j.value("nin_blocks", json::array()))
      spec.nin_blocks.push_back(
          {bj.at("block_id").get<std::size_t>(), bj.at("kernels").get<std::vector<std::size_t>>()});
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "model_spec", e.what());
  }
  validate(spec);
  return spec;
}

ModelSpec mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                   std::size_t num_classes, Activation act, bool bias) {
  ModelSpec s;
  s.family = Family::kMlp;
  s.input_shape = {input_dim};
  s.num_classes = num_classes;
  for (auto w : hidden) s.layers.push_back(linear(w, act, bias));
  s.layers.push_back(linear(num_classes, Activation::kNone, bias));
  validate(s);
  return s;
}

ModelSpec convnet_spec(const Shape& input_shape, std::size_t num_classes,
                       const ConvnetOptions& o) {
  ModelSpec s;
  s.family = Family::kConvnet;
  s.input_shape = input_shape;
  s.num_classes = num_classes;
  for (std::size_t i = 0; i < o.conv_layers; ++i) {
    s.layers.push_back(conv(o.channels, o.activation));
    if (o.maxpool && i < 2) s.layers.push_back(simple(LayerKind::kMaxPool));
  }
  if (o.dropout > 0.0) {
    LayerSpec d = simple(LayerKind::kDropout);
    d.dropout = o.dropout;
    s.layers.push_back(d);
  }
  s.layers.push_back(simple(o.global_pool ? LayerKind::kGlobalAvgPool : LayerKind::kFlatten));
  s.layers.push_back(linear(num_classes, Activation::kNone));
  validate(s);
  return s;
}

ModelSpec resnet_like_spec(const Shape& input_shape, std::size_t num_classes, std::size_t blocks,
                           std::size_t channels) {
  ModelSpec s;
  s.family = Family::kResnetLike;
  s.input_shape = input_shape;
  s.num_classes = num_classes;
  s.layers.push_back(conv(channels, Activation::kRelu));
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t block_input = s.layers.size();  // activation index
    s.layers.push_back(conv(channels, Activation::kRelu));
    s.layers.push_back(conv(channels, Activation::kRelu));
    s.skip_connections.push_back({block_input, s.layers.size() - 1, SkipMode::kAdd, true});
  }
  s.layers.push_back(simple(LayerKind::kFlatten));
  s.layers.push_back(linear(num_classes, Activation::kNone));
  validate(s);
  return s;
}

ModelSpec densenet_like_spec(const Shape& input_shape, std::size_t num_classes,
                             std::size_t layers_per_block, std::size_t growth,
                             std::size_t blocks) {
  ModelSpec s;
  s.family = Family::kDensenetLike;
  s.input_shape = input_shape;
  s.num_classes = num_classes;
  s.layers.push_back(conv(2 * growth, Activation::kRelu));
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t start = s.layers.size();  // activation index of the block input
    // Layer j sees its predecessor plus every earlier feature map of the
    // block; the layer closing the block (pool or flatten) sees all of them.
    for (std::size_t j = 0; j <= layers_per_block; ++j) {
      const std::size_t to = s.layers.size();
      for (std::size_t i = 0; i < j; ++i)
        s.skip_connections.push_back({start + i, to, SkipMode::kConcat, true});
      if (j < layers_per_block)
        s.layers.push_back(conv(growth, Activation::kRelu));
      else
        s.layers.push_back(simple(b + 1 == blocks ? LayerKind::kFlatten : LayerKind::kMaxPool));
    }
  }
  s.layers.push_back(linear(num_classes, Activation::kNone));
  validate(s);
  return s;
}

ModelSpec densenet_cut_variant(const ModelSpec& spec, int variant) {
  if (variant != 1 && variant != 2)
    fail(ErrorCode::kInvalidArgument, "densenet_cut_variant", "variant must be 1 or 2");
  ModelSpec out = spec;
  // Blocks are delimited by maxpool layers.
  auto block_of = [&](std::size_t layer) {
    std::size_t b = 0;
    for (std::size_t i = 0; i < layer && i < spec.layers.size(); ++i)
      if (spec.layers[i].kind == LayerKind::kMaxPool) ++b;
    return b;
  };
  std::vector<std::size_t> seen;  // concat skips counted per block
  for (auto& sk : out.skip_connections) {
    if (sk.mode != SkipMode::kConcat) continue;
    const std::size_t b = block_of(sk.to);
    if (seen.size() <= b) seen.resize(b + 1, 0);
    const std::size_t k = seen[b]++;
    if (variant == 2 || k % 2 == 1) sk.enabled = false;
  }
  validate(out);
  return out;
}

ModelSpec nin_net_spec(const Shape& input_shape, std::size_t num_classes,
                       const std::vector<std::vector<std::size_t>>& block_kernels,
                       std::size_t branch_channels) {
  ModelSpec s;
  s.family = Family::kNinNet;
  s.input_shape = input_shape;
  s.num_classes = num_classes;
  for (std::size_t b = 0; b < block_kernels.size(); ++b) {
    s.nin_blocks.push_back({b, block_kernels[b]});
    LayerSpec l;
    l.kind = LayerKind::kNin;
    l.width = branch_channels;
    l.activation = Activation::kRelu;
    l.nin_block = b;
    s.layers.push_back(l);
    if (b + 1 < block_kernels.size()) s.layers.push_back(simple(LayerKind::kMaxPool));
  }
  s.layers.push_back(simple(LayerKind::kFlatten));
  s.layers.push_back(linear(num_classes, Activation::kNone));
  validate(s);
  return s;
}

}  // namespace gleak
