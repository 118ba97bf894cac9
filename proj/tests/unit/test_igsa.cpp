// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "gleak/error.hpp"
#include "gleak/igsa.hpp"
#include "test_util.hpp"

using namespace gleak;
using gleak::testing::random_tensor;

TEST_CASE("igsa layer weights") {
  const auto w = igsa_layer_weights(3);
  REQUIRE(w.size() == 3);
  CHECK(w[0] == 2.0);
  CHECK(w[1] == 1.5);
  CHECK(w[2] == doctest::Approx(4.0 / 3.0));
  CHECK(igsa_layer_weights(1) == std::vector<double>{2.0});
}

TEST_CASE("input gradient map") {
  SUBCASE("zero-weight linear net: W row c is (1/3 - [c == y]) x") {
    const ModelSpec s = mlp_spec(4, {}, 3, Activation::kNone);
    const ModelState st = build_model(s, InitScheme::kZero, 0);
    const Tensor x = Tensor({1, 4}, {0.3, -0.2, 0.9, 0.5});
    const auto phi = input_gradient_map(s, st, x, {1});
    REQUIRE(phi.size() == 1);
    REQUIRE(phi[0].size() == 15);
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = 1.0 / 3.0 - (c == 1 ? 1.0 : 0.0);
      for (std::size_t j = 0; j < 4; ++j) CHECK(phi[0][c * 4 + j] == doctest::Approx(d * x[j]).epsilon(1e-14));
      CHECK(phi[0][12 + c] == doctest::Approx(d).epsilon(1e-14));
    }
  }
  SUBCASE("duplicated sample equals the single sample") {
    const ModelSpec s = mlp_spec(5, {6}, 3, Activation::kTanh);
    const ModelState st = build_model(s, InitScheme::kUniformFanIn, 3);
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({1, 5}, rng);
    Tensor xx({2, 5});
    for (std::size_t i = 0; i < 10; ++i) xx[i] = x[i % 5];
    const auto one = input_gradient_map(s, st, x, {2});
    const auto two = input_gradient_map(s, st, xx, {2, 2});
    for (std::size_t l = 0; l < one.size(); ++l) CHECK(max_abs_diff(one[l], two[l]) < 1e-15);
  }
  SUBCASE("finite differences") {
    const ModelSpec s = mlp_spec(4, {5}, 2, Activation::kSigmoid);
    const ModelState st = build_model(s, InitScheme::kUniformFanIn, 8);
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({3, 4}, rng);
    const Labels y{0, 1, 1};
    const auto phi = input_gradient_map(s, st, x, y);
    const Tensor flat = concat_flat(phi);
    auto f = [&](const Tensor& w) { return loss_gradient(s, unflatten(s, w), x, y).loss; };
    CHECK(gleak::testing::rel_err(flat, finite_diff_gradient(f, flatten(st), 1e-6)) < 1e-6);
  }
}

TEST_CASE("igsa") {
  const ModelSpec lin = mlp_spec(6, {}, 3, Activation::kNone);
  const ModelState zero = build_model(lin, InitScheme::kZero, 0);
  std::mt19937_64 rng(4);
  const Tensor x1 = random_tensor({2, 6}, rng, 0, 1), x2 = random_tensor({2, 6}, rng, 0, 1);
  const Labels y{0, 2};
  IgsaConfig c;
  c.num_samples = 64;

  SUBCASE("affine map: the probe location does not matter") {
    const IgsaScore a = igsa(lin, zero, x1, y, c), b = igsa(lin, zero, x2, y, c);
    CHECK(b.raw == doctest::Approx(a.raw).epsilon(1e-12));
    IgsaConfig other = c;
    other.seed = 99;
    const IgsaScore d = igsa(lin, zero, x2, y, other);
    const double se = std::hypot(a.standard_error, d.standard_error);
    CHECK(std::abs(a.mean_difference - d.mean_difference) < 3.0 * se);
  }
  SUBCASE("radius and weight homogeneity") {
    IgsaConfig wide = c;
    wide.radius *= 2.0;
    CHECK(igsa(lin, zero, x1, y, wide).raw == doctest::Approx(igsa(lin, zero, x1, y, c).raw / 2.0).epsilon(1e-12));

    const ModelSpec s = mlp_spec(6, {8}, 3, Activation::kTanh);
    const ModelState st = build_model(s, InitScheme::kUniformFanIn, 1);
    const IgsaScore base = igsa(s, st, x1, y, c);
    CHECK(igsa(s, st, x1, y, wide).raw == doctest::Approx(base.raw / 2.0).epsilon(1e-2));
    IgsaConfig doubled = c;
    doubled.layer_weights = igsa_layer_weights(2);
    for (auto& w : doubled.layer_weights) w *= 2.0;
    CHECK(igsa(s, st, x1, y, doubled).raw == doctest::Approx(base.raw / 2.0).epsilon(1e-13));
    CHECK(igsa(s, st, x1, y, c).raw == base.raw);
    CHECK(base.layer_difference.size() == 2);
    CHECK_FALSE(base.saturated);
  }
  SUBCASE("constant gradient saturates") {
    const ModelSpec s = mlp_spec(6, {5}, 3, Activation::kRelu);
    const IgsaScore sc = igsa(s, build_model(s, InitScheme::kZero, 0), x1, y, c);
    CHECK(sc.saturated);
    CHECK(sc.raw == kIgsaCap);
  }
  SUBCASE("errors") {
    IgsaConfig bad = c;
    bad.num_samples = 0;
    CHECK_THROWS_AS(igsa(lin, zero, x1, y, bad), Error);
    bad = c;
    bad.radius = 0.0;
    CHECK_THROWS_AS(igsa(lin, zero, x1, y, bad), Error);
    bad = c;
    bad.layer_weights = {1.0, 2.0};
    CHECK_THROWS_AS(igsa(lin, zero, x1, y, bad), Error);
  }
}

TEST_CASE("uniform ball and compensated mean") {
  std::mt19937_64 rng(3);
  double mean_r = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto v = uniform_ball(5, 0.5, rng);
    double s = 0.0;
    for (double e : v) s += e * e;
    CHECK(std::sqrt(s) <= 0.5);
    mean_r += std::sqrt(s) / 0.5 / n;
  }
  // E|v| / r = d / (d + 1) for the uniform ball.
  CHECK(mean_r == doctest::Approx(5.0 / 6.0).epsilon(0.01));

  std::vector<double> v{1e16, 1.0, -1e16, 3.0, 2.5e-3};
  const double fwd = compensated_mean(v);
  std::reverse(v.begin(), v.end());
  CHECK(compensated_mean(v) == fwd);
  CHECK(fwd == doctest::Approx(4.0025 / 5.0).epsilon(1e-12));
}

TEST_CASE("igsa trace normalisation") {
  const ModelSpec s = mlp_spec(4, {5}, 2, Activation::kTanh);
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({2, 4}, rng, 0, 1);
  IgsaConfig c;
  c.num_samples = 16;
  const ModelState a = build_model(s, InitScheme::kUniformFanIn, 1);
  const std::vector<ModelState> same{a, a, a};
  const IgsaTrace flat = igsa_trace(s, same, x, {0, 1}, c);
  CHECK(flat.degenerate);
  CHECK(flat.normalized == flat.raw);

  const std::vector<ModelState> runs{a, build_model(s, InitScheme::kUniformFanIn, 2),
                                     build_model(s, InitScheme::kUniformFanIn, 3)};
  const IgsaTrace t = igsa_trace(s, runs, x, {0, 1}, c);
  CHECK_FALSE(t.degenerate);
  CHECK(*std::min_element(t.normalized.begin(), t.normalized.end()) == 0.0);
  CHECK(*std::max_element(t.normalized.begin(), t.normalized.end()) == 1.0);

  const IgsaTrace one = igsa_trace(s, std::vector<ModelState>{a}, x, {0, 1}, c);
  CHECK(one.degenerate);
  CHECK(one.normalized == one.raw);
}
