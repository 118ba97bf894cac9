// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "gleak/attack.hpp"
#include "gleak/defense.hpp"
#include "gleak/error.hpp"
#include "gleak/fed.hpp"
#include "gleak/graph.hpp"
#include "gleak/io.hpp"
#include "gleak/kernels.hpp"
#include "gleak/metrics.hpp"
#include "gleak/model.hpp"
#include "gleak/rng.hpp"

namespace gleak {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Tensor uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

SelfCheck autodiff(std::mt19937_64& rng) {
  ConvnetOptions o;
  o.channels = 3;
  o.activation = Activation::kTanh;
  o.dropout = 0.0;
  const ModelSpec spec = convnet_spec({2, 6, 6}, 3, o);
  const ModelState st = build_model(spec, InitScheme::kUniformFanIn, rng());
  const Tensor x = uniform({2, 2, 6, 6}, rng, 0.0, 1.0);
  const Labels y{0, 2};
  const Tensor g = loss_gradient(spec, st, x, y).gradient;
  const Tensor flat = flatten(st);
  const Tensor fd = finite_diff_gradient(
      [&](const Tensor& w) { return loss_gradient(spec, unflatten(spec, w), x, y).loss; }, flat, 1e-5);
  const double err = l2_norm(g - fd) / l2_norm(fd);
  return {"autodiff vs finite differences", err < 1e-5, "rel " + sci(err) + " < 1e-5"};
}

SelfCheck kernels_match(std::mt19937_64& rng) {
  const std::size_t m = 37, n = 29, k = 41;
  const Tensor a = uniform({m * k}, rng, -1, 1), b = uniform({k * n}, rng, -1, 1);
  std::vector<double> c1(m * n), c2(m * n);
  bool same = true;
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      kernels::gemm(ta, tb, m, n, k, a.data().data(), b.data().data(), c1.data());
      kernels::reference::gemm(ta, tb, m, n, k, a.data().data(), b.data().data(), c2.data());
      same = same && c1 == c2;
    }
  std::vector<kernels::Index> idx(5000);
  std::uniform_int_distribution<kernels::Index> pick(-1, static_cast<kernels::Index>(a.size()) - 1);
  for (auto& i : idx) i = pick(rng);
  std::vector<double> g1(idx.size()), g2(idx.size()), s1(a.size()), s2(a.size());
  kernels::gather(a.data(), idx, g1);
  kernels::reference::gather(a.data(), idx, g2);
  kernels::scatter_add(g1, idx, s1);
  kernels::reference::scatter_add(g2, idx, s2);
  same = same && g1 == g2 && s1 == s2;
  return {"parallel kernels equal serial reference", same, same ? "bitwise" : "differs"};
}

SelfCheck hungarian_brute(std::mt19937_64& rng) {
  double worst = 0.0;
  for (std::size_t n = 1; n <= 5; ++n)
    for (int rep = 0; rep < 20; ++rep) {
      const Tensor cost = uniform({n * n}, rng, 0, 1);
      const auto a = hungarian(cost.data(), n);
      double got = 0.0;
      for (std::size_t i = 0; i < n; ++i) got += cost[i * n + a[i]];
      std::vector<std::size_t> p(n);
      std::iota(p.begin(), p.end(), 0);
      double best = INFINITY;
      do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += cost[i * n + p[i]];
        best = std::min(best, s);
      } while (std::next_permutation(p.begin(), p.end()));
      worst = std::max(worst, got - best);
    }
  return {"hungarian equals brute force (n <= 5)", worst < 1e-12, "excess " + sci(worst)};
}

SelfCheck qsgd_unbiased(std::mt19937_64& rng) {
  const Tensor v = uniform({16}, rng, -1, 1);
  const int draws = 4000;
  Tensor mean({16});
  for (int d = 0; d < draws; ++d) {
    const Tensor q = qsgd(v, 2, rng());
    for (std::size_t i = 0; i < 16; ++i) mean[i] += q[i] / draws;
  }
  const double err = l2_norm(mean - v) / l2_norm(v);
  return {"qsgd is unbiased", err < 0.05, "rel " + sci(err) + " < 0.05 over 4000 draws"};
}

SelfCheck analytic(std::mt19937_64& rng) {
  const ModelSpec spec = mlp_spec(8, {12}, 1, Activation::kLeakyRelu);
  const ModelState st = build_model(spec, InitScheme::kUniformFanIn, rng());
  ClientDataset d;
  d.x = uniform({1, 8}, rng, 0, 1);
  d.y = {1};
  const auto lt = local_train(spec, st, d, 1, 1, 0.1, 0);
  const Tensor rec = analytic_invert(lt.payload, spec, st, 1);
  const double err = l2_norm(rec - d.x) / l2_norm(d.x);
  return {"analytic inversion of one step", err < 1e-6, "rel " + sci(err) + " < 1e-6"};
}

SelfCheck formats(std::mt19937_64& rng, const std::filesystem::path& dir) {
  ClientDataset d;
  d.x = Tensor({2, 3, 2, 2});
  for (std::size_t i = 0; i < d.x.size(); ++i) d.x[i] = static_cast<double>((i * 37) % 256) / 255.0;
  d.y = {3, 7};
  write_cifar_binary(dir / "fixture.bin", d);
  const ClientDataset back = load_cifar_binary(dir / "fixture.bin", {3, 2, 2});
  const Tensor t = uniform({3, 4}, rng, -1e3, 1e3);
  write_tensor(dir / "fixture.glkt", t);
  const bool ok = back.y == d.y && back.x == d.x && read_tensor(dir / "fixture.glkt") == t;
  return {"cifar and tensor files round-trip", ok, ok ? "exact" : "mismatch"};
}

}  // namespace

std::vector<SelfCheck> run_self_checks(std::uint64_t seed, const std::filesystem::path& scratch) {
  std::filesystem::create_directories(scratch);
  auto rng = make_rng({seed, 0x7e51u});
  std::vector<SelfCheck> out;
  auto guarded = [&](const char* name, auto fn) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, e.what()});
    }
  };
  guarded("autodiff", [&] { return autodiff(rng); });
  guarded("kernels", [&] { return kernels_match(rng); });
  guarded("hungarian", [&] { return hungarian_brute(rng); });
  guarded("qsgd", [&] { return qsgd_unbiased(rng); });
  guarded("analytic", [&] { return analytic(rng); });
  guarded("formats", [&] { return formats(rng, scratch); });
  return out;
}

}  // namespace gleak
