// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "gleak/error.hpp"
#include "gleak/fed.hpp"
#include "gleak/generator.hpp"
#include "gleak/rng.hpp"
#include "test_util.hpp"

using namespace gleak;

namespace {

GeneratorSpec tiny_spec() {
  GeneratorSpec s;
  s.latent_dim = 6;
  s.widths = {4, 4, 3};
  s.channels = 1;
  s.resolution = 8;
  s.family = {FamilyKind::kGaussianBlobs, 8, 1, 2, 3};
  s.samples = 64;
  s.epochs = 6;
  s.batch_size = 16;
  return s;
}

}  // namespace

TEST_CASE("generator forward") {
  const GeneratorSpec s = tiny_spec();
  const Generator gen = init_generator(s, 1);
  CHECK(gen.params.size() == 8);
  CHECK(init_generator(s, 1).params == gen.params);
  auto rng = make_rng({1});
  const Tensor z = sample_latents(3, s.latent_dim, rng);
  const Tensor x = decode(gen, z);
  CHECK(x.shape() == Shape{3, 1, 8, 8});
  CHECK(std::all_of(x.data().begin(), x.data().end(), [](double v) { return v > 0.0 && v < 1.0; }));

  // Input gradient through the transposed convolutions against central differences.
  std::mt19937_64 wr(5);
  const Tensor w = gleak::testing::random_tensor(x.shape(), wr);
  auto f = [&](const Tensor& zz) { return dot(decode(gen, zz), w); };
  Graph g;
  std::vector<NodeId> p;
  for (const auto& t : gen.params) p.push_back(g.constant(t));
  const NodeId zn = g.leaf(z);
  const NodeId out = ops::dot(g, generator_forward(g, s, p, zn), g.constant(w));
  const Tensor analytic = backward(g, out, false).tensor(zn);
  CHECK(gleak::testing::rel_err(analytic, finite_diff_gradient(f, z, 1e-5)) < 1e-6);

  Graph bad;
  std::vector<NodeId> bp;
  for (const auto& t : gen.params) bp.push_back(bad.constant(t));
  CHECK_THROWS_AS(generator_forward(bad, s, bp, bad.leaf(Tensor({2, 5}))), Error);
  GeneratorSpec odd = s;
  odd.resolution = odd.family.resolution = 6;
  CHECK_THROWS_AS(validate(odd), Error);
  CHECK(generator_spec_from_json(to_json(s)).widths == s.widths);
}

TEST_CASE("generator training lowers reconstruction error") {
  const GeneratorSpec s = tiny_spec();
  const GeneratorTraining a = train_generator(s);
  CHECK(a.epoch_loss.size() == s.epochs);
  CHECK(a.epoch_loss.back() < 0.7 * a.epoch_loss.front());
  CHECK(a.latents.shape() == Shape{64, 6});
  CHECK(train_generator(s).generator.params == a.generator.params);
}

TEST_CASE("gia_l") {
  const GeneratorSpec gs = tiny_spec();
  const Generator gen = init_generator(gs, 2);
  auto rng = make_rng({9});
  const Tensor z0 = sample_latents(2, gs.latent_dim, rng);
  const ClientDataset victim{decode(gen, z0), {0, 2}, "planted"};
  ConvnetOptions o;
  o.dropout = 0.0;
  o.maxpool = false;
  o.channels = 4;
  const ModelSpec spec = convnet_spec({1, 8, 8}, 3, o);
  const ModelState st = build_model(spec, InitScheme::kUniformFanIn, 4);
  const GradientPayload p = local_train(spec, st, victim, 1, 2, 0.1, 0).payload;
  const AttackTarget t{spec, st, p, victim.x.shape(), victim.y};
  AttackConfig c;
  c.kind = AttackKind::kGiaL;
  c.tv_weight = 0.0;

  SUBCASE("planted optimum") {
    Graph g;
    std::vector<NodeId> pn;
    for (const auto& q : gen.params) pn.push_back(g.constant(q));
    const NodeId x = generator_forward(g, gs, pn, g.constant(z0));
    CHECK(g.value(gradient_match_loss(g, x, victim.y, t, c)).item() < 1e-24);
  }
  SUBCASE("zero iterations decode the initial latents") {
    c.iterations = 0;
    const AttackResult r = run_gia_l(c, t, gen);
    auto init = make_rng({c.seed, tag(Stream::kAttackInit), 0});
    CHECK(r.reconstructed == decode(gen, sample_latents(2, gs.latent_dim, init)));
    CHECK(r.loss_trace.size() == 1);
  }
  SUBCASE("latent search lowers the loss, finetuning adds iterations") {
    c.iterations = 60;
    c.latent_step_size = 0.05;
    c.finetune_iterations = 10;
    const AttackResult r = run_gia_l(c, t, gen);
    CHECK(r.loss_trace.size() == 71);
    CHECK(r.loss_trace[60] < r.loss_trace[0]);
    CHECK(r.reconstructed.shape() == victim.x.shape());
    CHECK(run_gia_l(c, t, gen).reconstructed == r.reconstructed);
  }
  SUBCASE("shape mismatch") {
    GeneratorSpec big = gs;
    big.resolution = big.family.resolution = 12;
    CHECK_THROWS_AS(run_gia_l(c, t, init_generator(big, 0)), Error);
  }
}
