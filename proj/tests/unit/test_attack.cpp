// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <cmath>
#include <random>

#include "doctest.h"
#include "gleak/attack.hpp"
#include "gleak/error.hpp"
#include "gleak/fed.hpp"
#include "gleak/metrics.hpp"
#include "gleak/rng.hpp"
#include "test_util.hpp"

using namespace gleak;
using gleak::testing::random_tensor;

namespace {

ClientDataset one_sample(const Tensor& x, int y) { return {x, {y}, "fixture"}; }

GradientPayload single_step_payload(const ModelSpec& s, const ModelState& st, const ClientDataset& d) {
  return local_train(s, st, d, 1, d.size(), 0.1, 0).payload;
}

double match_loss_value(const Tensor& x, const Labels& y, const AttackTarget& t, const AttackConfig& c) {
  Graph g;
  return g.value(gradient_match_loss(g, g.constant(x), y, t, c)).item();
}

}  // namespace

TEST_CASE("tv prior") {
  CHECK(tv_prior(Tensor({2, 3, 4, 4}, std::vector<double>(96, 0.7))) == 0.0);
  CHECK(tv_prior(Tensor({1, 1, 2, 2}, {0, 1, 0, 1})) == 2.0);
  for (std::size_t n : {2u, 3u, 5u}) {
    Tensor x({1, 1, n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) x[i * n + j] = (i + j) % 2;
    CHECK(tv_prior(x) == static_cast<double>(2 * n * (n - 1)));
  }
  CHECK(tv_prior(Tensor({3, 2, 1, 1}, std::vector<double>(6, 0.5))) == 0.0);
  // Mean over the batch.
  CHECK(tv_prior(Tensor({2, 1, 2, 2}, {0, 1, 0, 1, 0, 1, 0, 1})) == 2.0);
  CHECK_THROWS_AS(tv_prior(Tensor({2, 4})), Error);
}

TEST_CASE("gradient matching loss") {
  const ModelSpec s = mlp_spec(5, {6}, 3, Activation::kTanh);
  const ModelState st = build_model(s, InitScheme::kUniformFanIn, 2);
  std::mt19937_64 rng(3);
  const ClientDataset d{random_tensor({2, 5}, rng, 0, 1), {0, 2}, "x"};
  const GradientPayload p = single_step_payload(s, st, d);
  const AttackTarget t{s, st, p, {2, 5}, d.y};
  AttackConfig c;
  c.tv_weight = 0.0;

  SUBCASE("zero at the truth") {
    CHECK(match_loss_value(d.x, d.y, t, c) < 1e-24);
    c.distance = Distance::kCosine;
    CHECK(std::abs(match_loss_value(d.x, d.y, t, c)) < 1e-12);
  }
  SUBCASE("cosine against the negated gradient is 2") {
    GradientPayload neg = p;
    neg.value = -1.0 * p.value;
    const AttackTarget tn{s, st, neg, {2, 5}, d.y};
    c.distance = Distance::kCosine;
    CHECK(match_loss_value(d.x, d.y, tn, c) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("update payloads are rescaled by -1/eta") {
    GradientPayload u = p;
    u.kind = PayloadKind::kUpdate;
    u.training.learning_rate = 0.25;
    u.value = -0.25 * p.value;
    CHECK(max_abs_diff(target_gradient(u), p.value) < 1e-15);
  }
  SUBCASE("layer subset") {
    c.layer_subset = {1};
    CHECK(match_loss_value(d.x, d.y, t, c) < 1e-24);
    c.layer_subset = {7};
    CHECK_THROWS_AS(match_loss_value(d.x, d.y, t, c), Error);
  }
}

TEST_CASE("second-order gradient of the matching loss agrees with finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const ModelSpec s = mlp_spec(4, {5}, 2, seed % 2 ? Activation::kTanh : Activation::kSigmoid);
    const ModelState st = build_model(s, InitScheme::kUniformFanIn, seed);
    std::mt19937_64 rng(seed + 10);
    const ClientDataset d{random_tensor({2, 4}, rng, 0, 1), {1, 0}, "x"};
    const GradientPayload p = single_step_payload(s, st, d);
    const AttackTarget t{s, st, p, {2, 4}, d.y};
    AttackConfig c;
    c.distance = seed < 2 ? Distance::kL2 : Distance::kCosine;
    const Tensor x0 = random_tensor({2, 4}, rng, 0, 1);
    Graph g;
    const NodeId xn = g.leaf(x0);
    const NodeId l = gradient_match_loss(g, xn, d.y, t, c);
    const std::array<NodeId, 1> tg{xn};
    const Tensor analytic = backward(g, l, false, tg).tensor(xn);
    const Tensor fd = finite_diff_gradient([&](const Tensor& x) { return match_loss_value(x, d.y, t, c); },
                                           x0, 1e-5);
    CHECK(gleak::testing::rel_err(analytic, fd, 1e-8) < 1e-4);
  }
}

TEST_CASE("image matching loss includes the TV term") {
  ConvnetOptions o;
  o.channels = 2;
  o.dropout = 0.0;
  const ModelSpec s = convnet_spec({1, 4, 4}, 2, o);
  const ModelState st = build_model(s, InitScheme::kUniformFanIn, 1);
  std::mt19937_64 rng(2);
  const ClientDataset d{random_tensor({1, 1, 4, 4}, rng, 0, 1), {1}, "x"};
  const GradientPayload p = single_step_payload(s, st, d);
  const AttackTarget t{s, st, p, {1, 1, 4, 4}, d.y};
  AttackConfig c;
  c.tv_weight = 0.5;
  CHECK(match_loss_value(d.x, d.y, t, c) == doctest::Approx(0.5 * tv_prior(d.x)).epsilon(1e-12));
}

TEST_CASE("run_gia_o basics") {
  const ModelSpec s = mlp_spec(6, {8}, 2, Activation::kSigmoid);
  const ModelState st = build_model(s, InitScheme::kUniformFanIn, 4);
  std::mt19937_64 rng(5);
  const ClientDataset d{random_tensor({2, 6}, rng, 0, 1), {0, 1}, "x"};
  const GradientPayload p = single_step_payload(s, st, d);
  const AttackTarget t{s, st, p, {2, 6}, d.y};
  AttackConfig c;
  c.iterations = 0;
  c.seed = 9;
  const AttackResult r0 = run_gia_o(c, t);
  auto init_rng = make_rng({9, tag(Stream::kAttackInit), 0});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor init({2, 6});
  for (auto& v : init.data()) v = u(init_rng);
  CHECK(r0.reconstructed == init);
  CHECK(r0.loss_trace.size() == 1);

  c.iterations = 20;
  const AttackResult a = run_gia_o(c, t), b = run_gia_o(c, t);
  CHECK(a.reconstructed == b.reconstructed);
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(a.loss_trace.back() < a.loss_trace.front());

  // With B = N and E = 1 the worst case collapses to the best case.
  AttackConfig w = c;
  w.adversary_case = AdversaryCase::kWst;
  CHECK(run_gia_o(w, t).reconstructed == a.reconstructed);

  c.restarts = 3;
  const AttackResult best = run_gia_o(c, t);
  CHECK(best.restart < 3);
  CHECK(best.loss_trace.back() <= a.loss_trace.back());
  CHECK(to_json(best, c).find("\"restart\"") != std::string::npos);

  AttackConfig bad;
  bad.restarts = 0;
  CHECK_THROWS_AS(run_gia_o(bad, t), Error);
  const AttackTarget wrong{s, st, p, {2, 5}, d.y};
  CHECK_THROWS_AS(run_gia_o(c, wrong), Error);
}

TEST_CASE("wst unrolls the victim's local steps") {
  const ModelSpec s = mlp_spec(3, {4}, 2, Activation::kTanh);
  const ModelState st = build_model(s, InitScheme::kUniformFanIn, 6);
  std::mt19937_64 rng(1);
  ClientDataset d{random_tensor({4, 3}, rng, 0, 1), {0, 1, 1, 0}, "x"};
  // E = 2, B = 2 on four samples: four steps. local_train shuffles, so build
  // the payload by hand in the order the adversary assumes.
  const double lr = 0.05;
  Tensor w = flatten(st);
  const Tensor w0 = w;
  for (int e = 0; e < 2; ++e)
    for (std::size_t b = 0; b < 2; ++b) {
      const std::array<std::size_t, 2> idx{2 * b, 2 * b + 1};
      w = w - lr * loss_gradient(s, unflatten(s, w), d.rows(idx), d.labels(idx)).gradient;
    }
  GradientPayload p;
  p.kind = PayloadKind::kUpdate;
  p.value = w - w0;
  p.u_actual = 4;
  p.training = {2, 2, 4, lr};
  const AttackTarget t{s, st, p, {4, 3}, d.y};
  AttackConfig c;
  c.adversary_case = AdversaryCase::kWst;
  c.tv_weight = 0.0;
  CHECK(match_loss_value(d.x, d.y, t, c) < 1e-24);
  c.adversary_case = AdversaryCase::kBst;
  CHECK(match_loss_value(d.x, d.y, t, c) > 1e-10);
  c.adversary_case = AdversaryCase::kWst;
  c.max_unroll = 3;
  CHECK_THROWS_AS(match_loss_value(d.x, d.y, t, c), Error);
}

TEST_CASE("gia_o recovers a single sample from a FedSGD gradient") {
  const ModelSpec s = mlp_spec(16, {32}, 3, Activation::kSigmoid);
  const ModelState st = build_model(s, InitScheme::kUniformFanIn, 7);
  std::mt19937_64 rng(8);
  const ClientDataset d{random_tensor({1, 16}, rng, 0, 1), {2}, "x"};
  const GradientPayload p = single_step_payload(s, st, d);
  const AttackTarget t{s, st, p, {1, 16}, d.y};
  AttackConfig c;
  c.iterations = 400;
  c.tv_weight = 0.0;
  const AttackResult r = run_gia_o(c, t);
  CHECK(psnr(d.x, r.reconstructed) > 30.0);
}

TEST_CASE("solve_logit") {
  CHECK(solve_logit(0.0) == 0.0);
  CHECK(solve_logit(-1.0 / (1.0 + std::exp(1.0))) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(solve_logit(0.5 / (1.0 + std::exp(-0.5))) == doctest::Approx(-0.5).epsilon(1e-10));
  // Grid scan: G is strictly decreasing up to the turning point.
  const double tc = logit_turning_point();
  CHECK(std::abs(logit_objective_derivative(tc)) < 1e-12);
  for (double t = -30.0; t < tc; t += 0.37) {
    CHECK(logit_objective(t + 0.01) < logit_objective(t));
    CHECK(solve_logit(logit_objective(t)) == doctest::Approx(t).epsilon(1e-9));
  }
  CHECK_THROWS_AS(solve_logit(-0.3), Error);
  const auto two = logit_roots(logit_objective(3.0));
  REQUIRE(two.size() == 2);
  CHECK(two[1] == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(logit_roots(0.2).size() == 1);
}

TEST_CASE("analytic inversion") {
  SUBCASE("two-layer leaky relu net") {
    const ModelSpec s = mlp_spec(8, {12}, 1, Activation::kLeakyRelu);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const ModelState st = build_model(s, InitScheme::kUniformFanIn, seed);
      std::mt19937_64 rng(seed + 100);
      const int y = seed % 2 ? 1 : -1;
      const Tensor x = random_tensor({1, 8}, rng, 0, 1);
      const Tensor rec = analytic_invert(single_step_payload(s, st, one_sample(x, y)), s, st, y);
      CHECK(relative_l2_error(rec, x) < 1e-6);
    }
  }
  SUBCASE("one identity layer is a rank-one factorization") {
    const ModelSpec s = mlp_spec(5, {}, 1, Activation::kNone, false);
    const ModelState st = build_model(s, InitScheme::kUniformFanIn, 3);
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({1, 5}, rng);
    const GradientPayload p = single_step_payload(s, st, one_sample(x, 1));
    CHECK(relative_l2_error(analytic_invert(p, s, st, 1), x) < 1e-12);
  }
  SUBCASE("preconditions") {
    const ModelSpec s = mlp_spec(4, {6}, 1, Activation::kLeakyRelu);
    const ModelState st = build_model(s, InitScheme::kUniformFanIn, 1);
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({1, 4}, rng, 0, 1);
    const GradientPayload two = local_train(s, st, one_sample(x, 1), 2, 1, 0.1, 0).payload;
    REQUIRE(two.u_actual == 2);
    CHECK_THROWS_AS(analytic_invert(two, s, st, 1), Error);

    const ModelSpec r = mlp_spec(4, {6}, 1, Activation::kRelu);
    const ModelState rs = build_model(r, InitScheme::kUniformFanIn, 1);
    CHECK_THROWS_AS(analytic_invert(single_step_payload(r, rs, one_sample(x, 1)), r, rs, 1), Error);

    const ModelSpec narrow = mlp_spec(4, {2}, 1, Activation::kLeakyRelu);
    const ModelState ns = build_model(narrow, InitScheme::kUniformFanIn, 1);
    try {
      analytic_invert(single_step_payload(narrow, ns, one_sample(x, 1)), narrow, ns, 1);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kRankDeficient);
      CHECK(e.context() == "layer 0");
    }
  }
}

namespace {

// Logistic regression whose first-step logit is exactly mu.
struct DriftFixture {
  ModelSpec spec = mlp_spec(6, {}, 1, Activation::kNone);
  ModelState state;
  ClientDataset data;

  explicit DriftFixture(double mu) {
    state = build_model(spec, InitScheme::kUniformFanIn, 21);
    std::mt19937_64 rng(22);
    data = one_sample(random_tensor({1, 6}, rng, 0, 1), 1);
    const double z = predict(spec, state, data.x)[0];
    const double b = state.params[0][1][0];
    const double wx = z - b;
    for (auto& v : state.params[0][0].data()) v *= (mu - b) / wx;
  }

  DriftPrediction run(double lr, std::size_t steps) const {
    const LocalTrainResult r =
        local_train(spec, state, data, steps, 1, lr, 0, LocalTrainOptions{true});
    return predict_multiupdate_drift(spec, state, 1, r.step_gradients);
  }
};

}  // namespace

TEST_CASE("multi-update drift prediction") {
  // Misclassified sample: the accumulated observation stays in range for every U.
  const DriftFixture f(-1.0);
  CHECK(predict(f.spec, f.state, f.data.x)[0] == doctest::Approx(-1.0).epsilon(1e-12));
  const DriftPrediction one = f.run(1e-3, 1);
  CHECK(one.predicted_drift == 0.0);
  CHECK(one.actual_drift == 0.0);
  CHECK(one.x_error == 0.0);
  CHECK(one.t_star == doctest::Approx(-1.0).epsilon(1e-10));

  const DriftPrediction two = f.run(1e-3, 2);
  CHECK(std::abs(two.predicted_drift - two.actual_drift) < 0.1 * std::abs(two.actual_drift));
  CHECK(two.x_error > 0.0);

  double prev = 0.0;
  for (std::size_t u : {2u, 4u, 8u}) {
    const double m = std::abs(f.run(1e-3, u).predicted_drift);
    CHECK(m > prev);
    prev = m;
  }

  // The redundant sum does not scale with eta, so the linearization error
  // settles to a nonzero limit instead of vanishing.
  std::vector<double> rel;
  for (double lr : {1e-2, 5e-3, 2.5e-3, 1.25e-3}) {
    const DriftPrediction d = f.run(lr, 2);
    rel.push_back(std::abs(d.predicted_drift - d.actual_drift) / std::abs(d.actual_drift));
  }
  for (std::size_t i = 1; i + 1 < rel.size(); ++i)
    CHECK(std::abs(rel[i + 1] - rel[i]) < std::abs(rel[i] - rel[i - 1]));
  CHECK(rel.back() > 0.05);

  // Two steps on a well-classified sample push the observation below the
  // range of the objective; there is no actual drift to compare against.
  const DriftFixture correct(0.5);
  CHECK(std::isnan(correct.run(1e-3, 2).actual_drift));
}

TEST_CASE("label inference") {
  SUBCASE("single sample, every class, with and without bias") {
    for (bool bias : {true, false}) {
      const ModelSpec s = mlp_spec(6, {10}, 4, Activation::kRelu, bias);
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ModelState st = build_model(s, InitScheme::kUniformFanIn, seed);
        std::mt19937_64 rng(seed);
        const Tensor x = random_tensor({1, 6}, rng, 0, 1);
        for (int c = 0; c < 4; ++c) {
          const LabelInference li = infer_labels(single_step_payload(s, st, one_sample(x, c)), s, 1);
          CHECK(li.labels == Labels{c});
          CHECK_FALSE(li.best_effort);
        }
      }
    }
  }
  SUBCASE("batch with every class present") {
    const ModelSpec s = mlp_spec(6, {10}, 4, Activation::kRelu);
    const ModelState st = build_model(s, InitScheme::kUniformFanIn, 3);
    std::mt19937_64 rng(5);
    const ClientDataset d{random_tensor({4, 6}, rng, 0, 1), {2, 0, 3, 1}, "x"};
    const LabelInference li = infer_labels(single_step_payload(s, st, d), s, 4);
    CHECK(li.present == std::vector<bool>{true, true, true, true});
    CHECK(li.best_effort);
  }
  SUBCASE("binary head") {
    const ModelSpec s = mlp_spec(3, {4}, 1, Activation::kSigmoid);
    const ModelState st = build_model(s, InitScheme::kUniformFanIn, 3);
    for (int y : {-1, 1})
      CHECK(infer_labels(single_step_payload(s, st, one_sample(Tensor({1, 3}, {0.2, 0.5, 0.9}), y)), s, 1)
                .labels == Labels{y});
  }
  SUBCASE("zero gradient") {
    const ModelSpec s = mlp_spec(3, {}, 2, Activation::kNone);
    GradientPayload p;
    p.value = Tensor({parameter_count(s)});
    CHECK_THROWS_AS(infer_labels(p, s, 1), Error);
  }
}
