// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

// Slow paired comparisons for the generator-based attack. Each seed draws a
// fresh victim batch (held out from the generator's training samples) and a
// fresh model; both attacks see the same payload and iteration budget.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>

#include "gleak/attack.hpp"
#include "gleak/fed.hpp"
#include "gleak/generator.hpp"
#include "gleak/metrics.hpp"
#include "gleak/rng.hpp"

using namespace gleak;

namespace {

constexpr std::size_t kBatch = 8, kSeeds = 5, kTrainSamples = 1024;

Generator trained_on(FamilyKind kind, std::size_t resolution) {
  GeneratorSpec s;
  s.resolution = resolution;
  s.family = {kind, resolution, 3, 4, 1};
  s.samples = kTrainSamples;
  s.epochs = 10;
  return train_generator(s).generator;
}

struct Victim {
  ClientDataset data;
  ModelSpec spec;
  ModelState state;
  GradientPayload payload;
};

Victim victim(FamilyKind kind, std::size_t resolution, std::size_t seed) {
  // Same family seed as the generator's data, indices past its training range.
  const ClientDataset all = generate_dataset({kind, resolution, 3, 4, 1}, kTrainSamples + kBatch * kSeeds);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < kBatch; ++i) idx.push_back(kTrainSamples + kBatch * seed + i);
  Victim v;
  v.data = all.subset(idx);
  ConvnetOptions o;
  o.dropout = 0.0;
  o.maxpool = false;
  v.spec = convnet_spec({3, resolution, resolution}, 4, o);
  v.state = build_model(v.spec, InitScheme::kUniformFanIn, derive_seed({seed, tag(Stream::kInit)}));
  v.payload = local_train(v.spec, v.state, v.data, 1, kBatch, 0.1, 0).payload;
  return v;
}

AttackConfig budget(std::size_t seed) {
  AttackConfig c;
  c.iterations = 500;
  c.tv_weight = 1e-4;
  c.seed = seed;
  return c;
}

double mse_of(const Victim& v, const Tensor& rec) { return evaluate_reconstruction(v.data.x, rec).mean_mse; }

}  // namespace

TEST_CASE("gia_l beats gia_o in distribution at 32x32, batch 8") {
  const Generator g = trained_on(FamilyKind::kGaussianBlobs, 32);
  double sum_o = 0, sum_l = 0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const Victim v = victim(FamilyKind::kGaussianBlobs, 32, s);
    AttackConfig c = budget(s);
    const AttackTarget t{v.spec, v.state, v.payload, v.data.x.shape(), v.data.y};
    c.kind = AttackKind::kGiaO;
    const double o = mse_of(v, run_gia_o(c, t).reconstructed);
    c.kind = AttackKind::kGiaL;
    const double l = mse_of(v, run_gia_l(c, t, g).reconstructed);
    std::printf("seed %zu  gia_o mse %.5f  gia_l mse %.5f\n", s, o, l);
    sum_o += o;
    sum_l += l;
  }
  CHECK(sum_l < sum_o);
}

TEST_CASE("gia_l is worse out of distribution") {
  // Victims from textures_b; one generator trained on it, one on textures_a.
  const Generator id = trained_on(FamilyKind::kTexturesB, 16), ood = trained_on(FamilyKind::kTexturesA, 16);
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const Victim v = victim(FamilyKind::kTexturesB, 16, s);
    AttackConfig c = budget(s);
    c.kind = AttackKind::kGiaL;
    const AttackTarget t{v.spec, v.state, v.payload, v.data.x.shape(), v.data.y};
    const double in = mse_of(v, run_gia_l(c, t, id).reconstructed), out = mse_of(v, run_gia_l(c, t, ood).reconstructed);
    std::printf("seed %zu  id mse %.5f  ood mse %.5f\n", s, in, out);
    CHECK(out > in);
  }
}
