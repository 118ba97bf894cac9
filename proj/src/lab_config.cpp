// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cstdio>
#include <set>

#include "gleak/error.hpp"
#include "gleak/lab.hpp"

namespace gleak {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Scenario, const char*>, 10> kScenarios{{
    {Scenario::kUpdateSweep, "update_sweep"},
    {Scenario::kMinibatchSweep, "minibatch_sweep"},
    {Scenario::kDimensionSweep, "dimension_sweep"},
    {Scenario::kIgsaTrace, "igsa_trace"},
    {Scenario::kSkipAblation, "skip_ablation"},
    {Scenario::kNinAblation, "nin_ablation"},
    {Scenario::kMicroMods, "micro_mods"},
    {Scenario::kDefenseTradeoff, "defense_tradeoff"},
    {Scenario::kAnalyticDemo, "analytic_demo"},
    {Scenario::kTheorem2Probe, "theorem2_probe"},
}};

Activation activation_from_string(const std::string& s) {
  for (auto a : {Activation::kNone, Activation::kRelu, Activation::kLeakyRelu, Activation::kSigmoid,
                 Activation::kSoftplus, Activation::kTanh})
    if (to_string(a) == s) return a;
  fail(ErrorCode::kConfig, "model.activation", "unknown activation '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

// Reads known keys out of one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, path_, "expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(ErrorCode::kConfig, key(k), "unknown key");
  }

  template <class T>
  void get(const char* k, T& out) {
    seen_.insert(k);
    if (!j_.contains(k)) return;
    try {
      out = j_.at(k).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfig, key(k), e.what());
    }
  }
  template <class T, class F>
  void get_as(const char* k, T& out, F&& parse) {
    seen_.insert(k);
    if (!j_.contains(k)) return;
    std::string s;
    get(k, s);
    out = parse(s);
  }
  const json* child(const char* k) {
    seen_.insert(k);
    return j_.contains(k) ? &j_.at(k) : nullptr;
  }
  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json defense_json(const DefenseConfig& d) {
  return {{"kind", to_string(d.kind)}, {"bits", d.bits},           {"fraction", d.fraction},
          {"bound", std::isinf(d.bound) ? json("inf") : json(d.bound)}, {"multiplier", d.multiplier}, {"seed", d.seed}};
}

DefenseConfig parse_defense(const json& j, const std::string& path) {
  DefenseConfig d;
  Reader r(j, path);
  r.get_as("kind", d.kind, defense_kind_from_string);
  r.get("bits", d.bits);
  r.get("fraction", d.fraction);
  if (const json* b = r.child("bound")) {
    if (b->is_string() && b->get<std::string>() == "inf") d.bound = std::numeric_limits<double>::infinity();
    else if (b->is_number()) d.bound = b->get<double>();
    else fail(ErrorCode::kConfig, r.key("bound"), "expected a number or \"inf\"");
  }
  r.get("multiplier", d.multiplier);
  r.get("seed", d.seed);
  return d;
}

std::vector<DefenseConfig> parse_chain(const json& j, const std::string& path) {
  if (!j.is_array()) fail(ErrorCode::kConfig, path, "expected an array of defenses");
  std::vector<DefenseConfig> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_defense(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

json chain_json(const std::vector<DefenseConfig>& c) {
  json a = json::array();
  for (const auto& d : c) a.push_back(defense_json(d));
  return a;
}

}  // namespace

std::string to_string(Scenario s) {
  for (const auto& [k, n] : kScenarios)
    if (k == s) return n;
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  for (const auto& [k, n] : kScenarios)
    if (s == n) return k;
  fail(ErrorCode::kConfig, "scenario", "unknown scenario '" + s + "'");
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ExperimentConfig default_config(Scenario s) {
  ExperimentConfig c;
  c.scenario = s;
  c.output_dir = "runs/" + to_string(s);
  c.attack.iterations = 1000;
  c.attack.tv_weight = 1e-4;
  c.attack.step_size = 0.1;
  c.fl = FLConfig{5, 5, 30, 2, 8, 32, 0.1, Protocol::kFedAvg, 0, 0, true};
  switch (s) {
    case Scenario::kUpdateSweep:
      break;
    case Scenario::kMinibatchSweep:
      c.victim = {8, 8, 1, 0.1};
      break;
    case Scenario::kDimensionSweep:
      c.seeds = 3;
      break;
    case Scenario::kIgsaTrace:
      c.seeds = 1;
      c.fl.learning_rate = 0.2;
      c.igsa.num_samples = 256;
      break;
    case Scenario::kSkipAblation:
      c.victim = {1, 1, 1, 0.1};
      c.model.preset = "resnet";
      break;
    case Scenario::kNinAblation:
      c.victim = {1, 1, 1, 0.1};
      c.model.preset = "nin";
      break;
    case Scenario::kMicroMods:
      c.victim = {1, 1, 1, 0.1};
      c.model.convnet.maxpool = true;
      break;
    case Scenario::kDefenseTradeoff:
      c.sweep.defense_grid = {{},
                              {DefenseConfig::qsgd(4)},
                              {DefenseConfig::qsgd(3)},
                              {DefenseConfig::qsgd(2)},
                              {DefenseConfig::qsgd(1)},
                              {DefenseConfig::clip(10.0)},
                              {DefenseConfig::clip(1.0)},
                              {DefenseConfig::clip(0.3)},
                              {DefenseConfig::clip(0.1)}};
      break;
    case Scenario::kAnalyticDemo:
      c.seeds = 10;
      c.model.preset = "mlp";
      c.model.hidden = {12};
      c.model.activation = Activation::kLeakyRelu;
      c.sweep.updates = {1, 2, 4, 8};
      break;
    case Scenario::kTheorem2Probe:
      c.seeds = 3;
      c.model.preset = "mlp";
      c.model.activation = Activation::kTanh;
      break;
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& f = c.data.family;
  const auto& m = c.model;
  const auto& a = c.attack;
  const auto& w = c.sweep;
  json grid = json::array();
  for (const auto& g : w.defense_grid) grid.push_back(chain_json(g));
  return {
      {"scenario", to_string(c.scenario)},
      {"seed", c.seed},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir},
      {"data",
       {{"kind", c.data.kind},
        {"family", to_string(f.kind)},
        {"resolution", f.resolution},
        {"channels", f.channels},
        {"classes", f.classes},
        {"path", c.data.path}}},
      {"model",
       {{"preset", m.preset},
        {"convnet",
         {{"channels", m.convnet.channels},
          {"conv_layers", m.convnet.conv_layers},
          {"activation", to_string(m.convnet.activation)},
          {"maxpool", m.convnet.maxpool},
          {"dropout", m.convnet.dropout},
          {"global_pool", m.convnet.global_pool}}},
        {"hidden", m.hidden},
        {"activation", to_string(m.activation)},
        {"bias", m.bias},
        {"blocks", m.blocks},
        {"channels", m.channels},
        {"layers_per_block", m.layers_per_block},
        {"growth", m.growth},
        {"dense_blocks", m.dense_blocks},
        {"nin_kernels", m.nin_kernels},
        {"branch_channels", m.branch_channels}}},
      {"victim",
       {{"samples", c.victim.samples},
        {"batch_size", c.victim.batch_size},
        {"epochs", c.victim.epochs},
        {"learning_rate", c.victim.learning_rate}}},
      {"fl",
       {{"num_clients", c.fl.num_clients},
        {"clients_per_round", c.fl.clients_per_round},
        {"rounds", c.fl.rounds},
        {"local_epochs", c.fl.local_epochs},
        {"batch_size", c.fl.batch_size},
        {"samples_per_client", c.fl.samples_per_client},
        {"learning_rate", c.fl.learning_rate},
        {"protocol", to_string(c.fl.protocol)},
        {"victim", c.fl.victim},
        {"victim_always_participates", c.fl.victim_always_participates}}},
      {"attack",
       {{"kind", to_string(a.kind)},
        {"distance", to_string(a.distance)},
        {"tv_weight", a.tv_weight},
        {"iterations", a.iterations},
        {"optimizer", to_string(a.optimizer)},
        {"step_size", a.step_size},
        {"step_decay", a.step_decay},
        {"restarts", a.restarts},
        {"labels_known", a.labels_known},
        {"adversary_case", to_string(a.adversary_case)},
        {"layer_subset", a.layer_subset},
        {"clamp_to_box", a.clamp_to_box},
        {"max_unroll", a.max_unroll},
        {"latent_step_size", a.latent_step_size},
        {"finetune_iterations", a.finetune_iterations},
        {"finetune_step_size", a.finetune_step_size}}},
      {"defenses", chain_json(c.defenses)},
      {"metrics",
       {{"psnr_threshold", c.metrics.psnr_threshold},
        {"perceptual_threshold", c.metrics.perceptual_threshold},
        {"data_range", c.metrics.data_range},
        {"restarts_for_wsrr", c.metrics.restarts_for_wsrr}}},
      {"igsa", {{"num_samples", c.igsa.num_samples}, {"radius", c.igsa.radius}, {"layer_weights", c.igsa.layer_weights}}},
      {"theorem2",
       {{"fd_step", c.theorem2.fd_step}, {"epsilon", c.theorem2.epsilon}, {"rank_tol", c.theorem2.rank_tol}}},
      {"generator", json::parse(to_json(c.generator))},
      {"sweep",
       {{"updates", w.updates},
        {"attack_kinds", w.attack_kinds},
        {"minibatches", w.minibatches},
        {"adversary_cases", w.adversary_cases},
        {"batch_sizes", w.batch_sizes},
        {"resolutions", w.resolutions},
        {"resolution_global_pool", w.resolution_global_pool},
        {"skip_families", w.skip_families},
        {"micro_mods", w.micro_mods},
        {"defense_grid", grid},
        {"probe_samples", w.probe_samples},
        {"theorem2_hidden", w.theorem2_hidden},
        {"theorem2_input_dim", w.theorem2_input_dim},
        {"theorem2_batch", w.theorem2_batch},
        {"analytic_input_dim", w.analytic_input_dim},
        {"analytic_learning_rate", w.analytic_learning_rate}}},
  };
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "config", e.what());
  }
  if (!j.is_object() || !j.contains("scenario")) fail(ErrorCode::kConfig, "scenario", "missing required key");
  if (!j["scenario"].is_string()) fail(ErrorCode::kConfig, "scenario", "expected a string");
  ExperimentConfig c = default_config(scenario_from_string(j["scenario"].get<std::string>()));
  {
    Reader r(j, "");
    std::string scenario;
    r.get("scenario", scenario);
    r.get("seed", c.seed);
    r.get("seeds", c.seeds);
    r.get("output_dir", c.output_dir);
    if (const json* d = r.child("data")) {
      Reader rd(*d, "data");
      rd.get("kind", c.data.kind);
      rd.get_as("family", c.data.family.kind, family_kind_from_string);
      rd.get("resolution", c.data.family.resolution);
      rd.get("channels", c.data.family.channels);
      rd.get("classes", c.data.family.classes);
      rd.get("path", c.data.path);
    }
    if (const json* mj = r.child("model")) {
      auto& m = c.model;
      Reader rm(*mj, "model");
      rm.get("preset", m.preset);
      if (const json* cj = rm.child("convnet")) {
        Reader rc(*cj, "model.convnet");
        rc.get("channels", m.convnet.channels);
        rc.get("conv_layers", m.convnet.conv_layers);
        rc.get_as("activation", m.convnet.activation, activation_from_string);
        rc.get("maxpool", m.convnet.maxpool);
        rc.get("dropout", m.convnet.dropout);
        rc.get("global_pool", m.convnet.global_pool);
      }
      rm.get("hidden", m.hidden);
      rm.get_as("activation", m.activation, activation_from_string);
      rm.get("bias", m.bias);
      rm.get("blocks", m.blocks);
      rm.get("channels", m.channels);
      rm.get("layers_per_block", m.layers_per_block);
      rm.get("growth", m.growth);
      rm.get("dense_blocks", m.dense_blocks);
      rm.get("nin_kernels", m.nin_kernels);
      rm.get("branch_channels", m.branch_channels);
    }
    if (const json* v = r.child("victim")) {
      Reader rv(*v, "victim");
      rv.get("samples", c.victim.samples);
      rv.get("batch_size", c.victim.batch_size);
      rv.get("epochs", c.victim.epochs);
      rv.get("learning_rate", c.victim.learning_rate);
    }
    if (const json* f = r.child("fl")) {
      Reader rf(*f, "fl");
      rf.get("num_clients", c.fl.num_clients);
      rf.get("clients_per_round", c.fl.clients_per_round);
      rf.get("rounds", c.fl.rounds);
      rf.get("local_epochs", c.fl.local_epochs);
      rf.get("batch_size", c.fl.batch_size);
      rf.get("samples_per_client", c.fl.samples_per_client);
      rf.get("learning_rate", c.fl.learning_rate);
      rf.get_as("protocol", c.fl.protocol, protocol_from_string);
      rf.get("victim", c.fl.victim);
      rf.get("victim_always_participates", c.fl.victim_always_participates);
    }
    if (const json* aj = r.child("attack")) {
      auto& a = c.attack;
      Reader ra(*aj, "attack");
      ra.get_as("kind", a.kind, attack_kind_from_string);
      ra.get_as("distance", a.distance, distance_from_string);
      ra.get("tv_weight", a.tv_weight);
      ra.get("iterations", a.iterations);
      ra.get_as("optimizer", a.optimizer, optimizer_from_string);
      ra.get("step_size", a.step_size);
      ra.get("step_decay", a.step_decay);
      ra.get("restarts", a.restarts);
      ra.get("labels_known", a.labels_known);
      ra.get_as("adversary_case", a.adversary_case, adversary_case_from_string);
      ra.get("layer_subset", a.layer_subset);
      ra.get("clamp_to_box", a.clamp_to_box);
      ra.get("max_unroll", a.max_unroll);
      ra.get("latent_step_size", a.latent_step_size);
      ra.get("finetune_iterations", a.finetune_iterations);
      ra.get("finetune_step_size", a.finetune_step_size);
    }
    if (const json* d = r.child("defenses")) c.defenses = parse_chain(*d, "defenses");
    if (const json* mj = r.child("metrics")) {
      Reader rm(*mj, "metrics");
      rm.get("psnr_threshold", c.metrics.psnr_threshold);
      rm.get("perceptual_threshold", c.metrics.perceptual_threshold);
      rm.get("data_range", c.metrics.data_range);
      rm.get("restarts_for_wsrr", c.metrics.restarts_for_wsrr);
    }
    if (const json* ij = r.child("igsa")) {
      Reader ri(*ij, "igsa");
      ri.get("num_samples", c.igsa.num_samples);
      ri.get("radius", c.igsa.radius);
      ri.get("layer_weights", c.igsa.layer_weights);
    }
    if (const json* tj = r.child("theorem2")) {
      Reader rt(*tj, "theorem2");
      rt.get("fd_step", c.theorem2.fd_step);
      rt.get("epsilon", c.theorem2.epsilon);
      rt.get("rank_tol", c.theorem2.rank_tol);
    }
    if (const json* g = r.child("generator")) {
      json merged = json::parse(to_json(c.generator));
      if (!g->is_object()) fail(ErrorCode::kConfig, "generator", "expected an object");
      merged.merge_patch(*g);
      c.generator = generator_spec_from_json(merged.dump());
    }
    if (const json* sj = r.child("sweep")) {
      auto& w = c.sweep;
      Reader rw(*sj, "sweep");
      rw.get("updates", w.updates);
      rw.get("attack_kinds", w.attack_kinds);
      rw.get("minibatches", w.minibatches);
      rw.get("adversary_cases", w.adversary_cases);
      rw.get("batch_sizes", w.batch_sizes);
      rw.get("resolutions", w.resolutions);
      rw.get("resolution_global_pool", w.resolution_global_pool);
      rw.get("skip_families", w.skip_families);
      rw.get("micro_mods", w.micro_mods);
      if (const json* g = rw.child("defense_grid")) {
        if (!g->is_array()) fail(ErrorCode::kConfig, "sweep.defense_grid", "expected an array of chains");
        w.defense_grid.clear();
        for (std::size_t i = 0; i < g->size(); ++i)
          w.defense_grid.push_back(parse_chain((*g)[i], "sweep.defense_grid[" + std::to_string(i) + "]"));
      }
      rw.get("probe_samples", w.probe_samples);
      rw.get("theorem2_hidden", w.theorem2_hidden);
      rw.get("theorem2_input_dim", w.theorem2_input_dim);
      rw.get("theorem2_batch", w.theorem2_batch);
      rw.get("analytic_input_dim", w.analytic_input_dim);
      rw.get("analytic_learning_rate", w.analytic_learning_rate);
    }
  }
  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) fail(ErrorCode::kConfig, key, msg);
  };
  need(c.seeds > 0, "seeds", "must be positive");
  need(!c.output_dir.empty(), "output_dir", "must be set");
  need(c.data.kind == "synthetic" || c.data.kind == "cifar", "data.kind", "must be synthetic or cifar");
  need(c.data.kind != "cifar" || !c.data.path.empty(), "data.path", "required for cifar data");
  validate(c.data.family);
  need(c.victim.samples > 0 && c.victim.batch_size > 0 && c.victim.epochs > 0, "victim", "N, B and E must be positive");
  need(c.victim.batch_size <= c.victim.samples, "victim.batch_size", "must not exceed victim.samples");
  need(c.victim.learning_rate > 0.0, "victim.learning_rate", "must be positive");
  validate(c.attack);
  validate(c.metrics);
  for (const auto& d : c.defenses) validate(d);
  for (const auto& g : c.sweep.defense_grid)
    for (const auto& d : g) validate(d);
  const std::set<std::string> presets{"mlp", "convnet", "resnet", "densenet", "nin"};
  need(presets.count(c.model.preset) > 0, "model.preset", "unknown preset '" + c.model.preset + "'");
  const auto& w = c.sweep;
  switch (c.scenario) {
    case Scenario::kUpdateSweep:
      need(!w.updates.empty(), "sweep.updates", "required by update_sweep");
      need(!w.attack_kinds.empty(), "sweep.attack_kinds", "required by update_sweep");
      for (const auto& k : w.attack_kinds) {
        const AttackKind kind = attack_kind_from_string(k);
        need(kind != AttackKind::kAnalytic, "sweep.attack_kinds", "analytic belongs to analytic_demo");
      }
      for (auto u : w.updates) need(u > 0, "sweep.updates", "entries must be positive");
      break;
    case Scenario::kMinibatchSweep:
      need(!w.minibatches.empty(), "sweep.minibatches", "required by minibatch_sweep");
      need(!w.adversary_cases.empty(), "sweep.adversary_cases", "required by minibatch_sweep");
      for (auto m : w.minibatches)
        need(m > 0 && c.victim.samples % m == 0, "sweep.minibatches", "counts must divide victim.samples");
      for (const auto& a : w.adversary_cases) adversary_case_from_string(a);
      break;
    case Scenario::kDimensionSweep:
      need(!w.batch_sizes.empty() || !w.resolutions.empty(), "sweep.batch_sizes", "batch_sizes or resolutions required");
      for (auto r : w.resolutions) need(r >= 4, "sweep.resolutions", "entries must be >= 4");
      break;
    case Scenario::kIgsaTrace:
      validate(c.fl);
      need(w.probe_samples > 0, "sweep.probe_samples", "must be positive");
      need(c.data.kind == "synthetic", "data.kind", "igsa_trace generates its client data");
      break;
    case Scenario::kSkipAblation:
      need(!w.skip_families.empty(), "sweep.skip_families", "required by skip_ablation");
      for (const auto& f : w.skip_families)
        need(f == "resnet" || f == "densenet", "sweep.skip_families", "entries are resnet or densenet");
      break;
    case Scenario::kNinAblation:
      need(!c.model.nin_kernels.empty(), "model.nin_kernels", "required by nin_ablation");
      break;
    case Scenario::kMicroMods:
      need(!w.micro_mods.empty(), "sweep.micro_mods", "required by micro_mods");
      for (const auto& m : w.micro_mods) micro_mod_from_string(m);
      break;
    case Scenario::kDefenseTradeoff:
      validate(c.fl);
      need(!w.defense_grid.empty(), "sweep.defense_grid", "required by defense_tradeoff");
      break;
    case Scenario::kAnalyticDemo:
      need(w.analytic_input_dim > 0, "sweep.analytic_input_dim", "must be positive");
      need(!w.updates.empty(), "sweep.updates", "required by analytic_demo");
      need(w.analytic_learning_rate > 0.0, "sweep.analytic_learning_rate", "must be positive");
      break;
    case Scenario::kTheorem2Probe:
      need(!w.theorem2_hidden.empty(), "sweep.theorem2_hidden", "required by theorem2_probe");
      need(w.theorem2_input_dim > 0 && w.theorem2_batch > 0, "sweep.theorem2_input_dim", "dims must be positive");
      break;
  }
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  return fnv1a(j.dump());
}

ModelSpec resolve_model(const ModelChoice& m, const Shape& shape, std::size_t classes) {
  std::size_t flat = 1;
  for (auto d : shape) flat *= d;
  if (m.preset == "mlp") return mlp_spec(flat, m.hidden, classes, m.activation, m.bias);
  if (m.preset == "convnet") return convnet_spec(shape, classes, m.convnet);
  if (m.preset == "resnet") return resnet_like_spec(shape, classes, m.blocks, m.channels);
  if (m.preset == "densenet")
    return densenet_like_spec(shape, classes, m.layers_per_block, m.growth, m.dense_blocks);
  if (m.preset == "nin") return nin_net_spec(shape, classes, m.nin_kernels, m.branch_channels);
  fail(ErrorCode::kConfig, "model.preset", "unknown preset '" + m.preset + "'");
}

}  // namespace gleak
