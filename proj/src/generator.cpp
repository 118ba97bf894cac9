// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/generator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "gleak/error.hpp"
#include "gleak/rng.hpp"

namespace gleak {
namespace {

constexpr double kSlope = 0.2;

struct DeconvGeom {
  std::size_t kernel, stride, pad;
};
constexpr DeconvGeom kDeconv[3] = {{4, 2, 1}, {4, 2, 1}, {3, 1, 1}};

std::vector<Shape> param_shapes(const GeneratorSpec& s) {
  const std::size_t side = s.resolution / 4;
  std::vector<Shape> out{{s.widths[0] * side * side, s.latent_dim}, {s.widths[0] * side * side}};
  const std::size_t cout[3] = {s.widths[1], s.widths[2], s.channels};
  std::size_t cin = s.widths[0];
  for (int i = 0; i < 3; ++i) {
    out.push_back({cin, cout[i], kDeconv[i].kernel, kDeconv[i].kernel});
    out.push_back({cout[i]});
    cin = cout[i];
  }
  return out;
}

std::vector<NodeId> bind_tensors(Graph& g, const std::vector<Tensor>& params, bool leaves) {
  std::vector<NodeId> out;
  for (const auto& p : params) out.push_back(leaves ? g.leaf(p) : g.constant(p));
  return out;
}

Tensor rows_of(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t per = t.size() / t.dim(0);
  Tensor out({idx.size(), per});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * per));
  return out;
}

}  // namespace

void validate(const GeneratorSpec& s) {
  if (s.latent_dim == 0) fail(ErrorCode::kInvalidSpec, "generator", "latent_dim must be positive");
  if (s.widths.size() != 3 || std::find(s.widths.begin(), s.widths.end(), 0u) != s.widths.end())
    fail(ErrorCode::kInvalidSpec, "generator", "needs three positive widths");
  if (s.resolution < 4 || s.resolution % 4 != 0)
    fail(ErrorCode::kInvalidSpec, "generator", "resolution must be a positive multiple of 4");
  if (s.channels != s.family.channels || s.resolution != s.family.resolution)
    fail(ErrorCode::kInvalidSpec, "generator", "output shape differs from the training family");
  if (s.batch_size == 0 || s.step_size <= 0.0 || s.latent_step_size <= 0.0)
    fail(ErrorCode::kInvalidSpec, "generator", "batch size and step sizes must be positive");
}

Shape generator_output_shape(const GeneratorSpec& s) { return {s.channels, s.resolution, s.resolution}; }

Generator init_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  validate(spec);
  Generator gen{spec, {}};
  const auto shapes = param_shapes(spec);
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    Tensor p(shapes[t]);
    if (shapes[t].size() > 1) {
      // Transposed conv: each output sees cin * k^2 / stride^2 inputs.
      double fan_in = static_cast<double>(shapes[t][1]);
      if (shapes[t].size() == 4) {
        const auto& d = kDeconv[t / 2 - 1];
        fan_in = static_cast<double>(shapes[t][0] * d.kernel * d.kernel) / static_cast<double>(d.stride * d.stride);
      }
      auto rng = make_rng({seed, tag(Stream::kGenerator), t});
      const double bound = std::sqrt(3.0 / fan_in);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : p.data()) v = u(rng);
    }
    gen.params.push_back(std::move(p));
  }
  return gen;
}

NodeId generator_forward(Graph& g, const GeneratorSpec& s, std::span<const NodeId> p, NodeId z) {
  if (p.size() != 8) fail(ErrorCode::kInvalidArgument, "generator", "expects 8 parameter tensors");
  const Shape zs = g.shape(z);
  if (zs.size() != 2 || zs[1] != s.latent_dim)
    fail(ErrorCode::kShapeMismatch, "generator", "latent " + shape_str(zs));
  const std::size_t side = s.resolution / 4;
  NodeId h = ops::add_channel_bias(g, ops::matmul(g, z, p[0], false, true), p[1]);
  h = ops::leaky_relu(g, h, kSlope);
  h = ops::reshape(g, h, {zs[0], s.widths[0], side, side});
  for (int i = 0; i < 3; ++i) {
    h = ops::conv_transpose2d(g, h, p[2 + 2 * i], p[3 + 2 * i], kDeconv[i].stride, kDeconv[i].pad);
    h = i < 2 ? ops::leaky_relu(g, h, kSlope) : ops::sigmoid(g, h);
  }
  return h;
}

Tensor decode(const Generator& gen, const Tensor& z) {
  Graph g;
  const auto p = bind_tensors(g, gen.params, false);
  return g.value(generator_forward(g, gen.spec, p, g.constant(z)));
}

Tensor sample_latents(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor z({n, d});
  for (auto& v : z.data()) v = nd(rng);
  return z;
}

GeneratorTraining train_generator(const GeneratorSpec& spec) {
  validate(spec);
  return train_generator(spec, generate_dataset(spec.family, spec.samples));
}

GeneratorTraining train_generator(const GeneratorSpec& spec, const ClientDataset& data) {
  validate(spec);
  data.check();
  if (data.sample_shape() != generator_output_shape(spec))
    fail(ErrorCode::kShapeMismatch, "train_generator", "data shape " + shape_str(data.x.shape()));
  const std::size_t n = data.size();
  GeneratorTraining out{init_generator(spec, spec.seed), {}, {}};
  auto rng = make_rng({spec.seed, tag(Stream::kGenerator), 0x1a7u});
  out.latents = sample_latents(n, spec.latent_dim, rng);

  std::vector<Optimizer> popt;
  for (const auto& p : out.generator.params) popt.emplace_back(OptimizerKind::kAdam, spec.step_size, p.size());
  // One optimiser per code so untouched codes keep their moments.
  std::vector<Optimizer> zopt(n, Optimizer(OptimizerKind::kAdam, spec.latent_step_size, spec.latent_dim));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < spec.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += spec.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b0, std::min(spec.batch_size, n - b0));
      Graph g;
      const auto p = bind_tensors(g, out.generator.params, true);
      const NodeId z = g.leaf(rows_of(out.latents, idx));
      const NodeId x = generator_forward(g, spec, p, z);
      const NodeId diff = ops::sub(g, x, g.constant(data.rows(idx)));
      const NodeId l = ops::mean(g, ops::mul(g, diff, diff));
      total += g.value(l).item() * static_cast<double>(idx.size());
      std::vector<NodeId> targets = p;
      targets.push_back(z);
      const GradMap gm = backward(g, l, false, targets);
      for (std::size_t t = 0; t < p.size(); ++t) popt[t].step(out.generator.params[t], gm.tensor(p[t]));
      const Tensor gz = gm.tensor(z);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        Tensor zr({spec.latent_dim}), gr({spec.latent_dim});
        for (std::size_t k = 0; k < spec.latent_dim; ++k) {
          zr[k] = out.latents[idx[r] * spec.latent_dim + k];
          gr[k] = gz[r * spec.latent_dim + k];
        }
        zopt[idx[r]].step(zr, gr);
        for (std::size_t k = 0; k < spec.latent_dim; ++k) out.latents[idx[r] * spec.latent_dim + k] = zr[k];
      }
    }
    out.epoch_loss.push_back(total / static_cast<double>(n));
  }
  return out;
}

AttackResult run_gia_l(const AttackConfig& c, const AttackTarget& t, const Generator& gen) {
  validate(c);
  validate(t);
  if (Shape(t.batch_shape.begin() + 1, t.batch_shape.end()) != generator_output_shape(gen.spec))
    fail(ErrorCode::kShapeMismatch, "run_gia_l", "generator output differs from the victim samples");
  const auto t0 = std::chrono::steady_clock::now();
  const Labels labels = attack_labels(c, t);
  const std::size_t n = t.batch_shape[0];

  std::optional<AttackResult> best;
  for (std::size_t r = 0; r < c.restarts; ++r) {
    auto rng = make_rng({c.seed, tag(Stream::kAttackInit), r});
    Tensor z = sample_latents(n, gen.spec.latent_dim, rng);
    std::vector<Tensor> params = gen.params;
    Optimizer zopt(c.optimizer, c.latent_step_size, z.size());
    std::vector<Optimizer> popt;
    for (const auto& p : params) popt.emplace_back(c.optimizer, c.finetune_step_size, p.size());

    std::vector<double> trace;
    bool ok = true;
    const std::size_t total = c.iterations + c.finetune_iterations;
    for (std::size_t it = 0;; ++it) {
      const bool finetune = it >= c.iterations;
      Graph g;
      const auto p = bind_tensors(g, params, finetune);
      const NodeId zn = g.leaf(z);
      const NodeId x = generator_forward(g, gen.spec, p, zn);
      const NodeId l = gradient_match_loss(g, x, labels, t, c);
      const double v = g.value(l).item();
      if (!std::isfinite(v)) {
        ok = false;
        break;
      }
      trace.push_back(v);
      if (it == total) break;
      std::vector<NodeId> targets{zn};
      if (finetune) targets.insert(targets.end(), p.begin(), p.end());
      const GradMap gm = backward(g, l, false, targets);
      const Tensor gz = gm.tensor(zn);
      if (!gz.all_finite()) {
        ok = false;
        break;
      }
      if (!finetune) {
        zopt.set_step_size(scheduled_step(c.latent_step_size, it, c.iterations, c.step_decay));
      } else {
        zopt.set_step_size(c.finetune_step_size);
        for (std::size_t k = 0; k < p.size(); ++k) popt[k].step(params[k], gm.tensor(p[k]));
      }
      zopt.step(z, gz);
    }
    if (!ok) continue;
    if (!best || trace.back() < best->loss_trace.back()) {
      best = AttackResult{};
      best->reconstructed = decode(Generator{gen.spec, params}, z);
      best->loss_trace = std::move(trace);
      best->restart = r;
    }
  }
  if (!best) fail(ErrorCode::kNonFinite, "run_gia_l", "every restart diverged");
  best->labels = labels;
  best->seed = c.seed;
  best->wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return *best;
}

std::string to_json(const GeneratorSpec& s) {
  nlohmann::json j{{"latent_dim", s.latent_dim},
                   {"widths", s.widths},
                   {"channels", s.channels},
                   {"resolution", s.resolution},
                   {"family",
                    {{"kind", to_string(s.family.kind)},
                     {"resolution", s.family.resolution},
                     {"channels", s.family.channels},
                     {"classes", s.family.classes},
                     {"seed", s.family.seed}}},
                   {"samples", s.samples},
                   {"epochs", s.epochs},
                   {"batch_size", s.batch_size},
                   {"step_size", s.step_size},
                   {"latent_step_size", s.latent_step_size},
                   {"seed", s.seed}};
  return j.dump();
}

GeneratorSpec generator_spec_from_json(const std::string& text) {
  GeneratorSpec s;
  try {
    const auto j = nlohmann::json::parse(text);
    s.latent_dim = j.value("latent_dim", s.latent_dim);
    s.widths = j.value("widths", s.widths);
    s.channels = j.value("channels", s.channels);
    s.resolution = j.value("resolution", s.resolution);
    if (j.contains("family")) {
      const auto& f = j["family"];
      s.family.kind = family_kind_from_string(f.value("kind", to_string(s.family.kind)));
      s.family.resolution = f.value("resolution", s.resolution);
      s.family.channels = f.value("channels", s.channels);
      s.family.classes = f.value("classes", s.family.classes);
      s.family.seed = f.value("seed", s.family.seed);
    } else {
      s.family.resolution = s.resolution;
      s.family.channels = s.channels;
    }
    s.samples = j.value("samples", s.samples);
    s.epochs = j.value("epochs", s.epochs);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.step_size = j.value("step_size", s.step_size);
    s.latent_step_size = j.value("latent_step_size", s.latent_step_size);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, "generator spec", e.what());
  }
  validate(s);
  return s;
}

}  // namespace gleak
