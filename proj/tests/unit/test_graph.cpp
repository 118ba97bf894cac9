// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <omp.h>

#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "gleak/error.hpp"
#include "gleak/graph.hpp"
#include "gleak/kernels.hpp"
#include "test_util.hpp"

using namespace gleak;
using gleak::testing::random_tensor;
using gleak::testing::rel_err;

namespace {

using Builder = std::function<NodeId(Graph&, std::span<const NodeId>)>;

Tensor projection(const Shape& s) {
  std::mt19937_64 rng(99 + shape_numel(s));
  return random_tensor(s, rng);
}

// Scalar <C, build(inputs)> with a fixed random C so every output entry gets
// a distinct adjoint.
NodeId projected(Graph& g, std::span<const NodeId> ids, const Builder& build) {
  const NodeId out = build(g, ids);
  return ops::dot(g, out, g.constant(projection(g.shape(out))));
}

double eval_scalar(const std::vector<Tensor>& inputs, const Builder& build) {
  Graph g;
  std::vector<NodeId> ids;
  for (const auto& t : inputs) ids.push_back(g.leaf(t));
  return g.value(projected(g, ids, build)).item();
}

void check_first_order(const std::vector<Tensor>& inputs, const Builder& build,
                       double tol = 1e-5) {
  Graph g;
  std::vector<NodeId> ids;
  for (const auto& t : inputs) ids.push_back(g.leaf(t));
  const NodeId root = projected(g, ids, build);
  const GradMap grads = backward(g, root, false);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& xk) {
      std::vector<Tensor> in = inputs;
      in[k] = xk;
      return eval_scalar(in, build);
    };
    const Tensor fd = finite_diff_gradient(f, inputs[k], 1e-5);
    const Tensor bw = grads.tensor(ids[k]);
    CHECK(bw.shape() == inputs[k].shape());
    CHECK(rel_err(bw, fd) < tol);
  }
}

// h(x) = <C2, d/dx <C, build(x)>>; its gradient needs double backprop.
void check_second_order(const Tensor& x, const Builder& build, double tol = 1e-4) {
  const Tensor c2 = projection({x.size() + 7});
  auto h_graph = [&](Graph& g, NodeId xid) {
    const std::array<NodeId, 1> ids{xid};
    const NodeId root = projected(g, ids, build);
    const GradMap gm = backward(g, root, true);
    const NodeId gx = gm.node(xid);
    Tensor c(g.shape(xid), std::vector<double>(c2.data().begin(),
                                               c2.data().begin() + static_cast<long>(x.size())));
    return ops::dot(g, gx, g.constant(std::move(c)));
  };
  Graph g;
  const NodeId xid = g.leaf(x);
  const NodeId h = h_graph(g, xid);
  const Tensor analytic = backward(g, h, false).tensor(xid);
  auto f = [&](const Tensor& xp) {
    Graph gg;
    return gg.value(h_graph(gg, gg.leaf(xp))).item();
  };
  CHECK(rel_err(analytic, finite_diff_gradient(f, x, 1e-5)) < tol);
}

// Keeps samples away from the kinks of relu/abs/maxpool.
Tensor away_from_zero(Tensor t, double margin = 0.05) {
  for (auto& v : t.data())
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  return t;
}

}  // namespace

TEST_CASE("forward_op examples") {
  Graph g;
  const NodeId a = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  const NodeId b = g.constant(Tensor::matrix({{1}, {0}}));
  CHECK(g.value(ops::matmul(g, a, b)) == Tensor::matrix({{1}, {3}}));
  const NodeId r = ops::relu(g, g.constant(Tensor::vector({-1, 0, 2})));
  CHECK(g.value(r) == Tensor::vector({0, 0, 2}));
  const NodeId sp = ops::softplus(g, g.constant(Tensor::scalar(0.0)));
  CHECK(g.value(sp).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("shape mismatch names op and shapes") {
  Graph g;
  const NodeId a = g.constant(Tensor({2, 3}));
  const NodeId b = g.constant(Tensor({2, 3}));
  try {
    ops::matmul(g, a, b);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
    CHECK(e.context() == "matmul");
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(g, a, g.constant(Tensor({3, 2}))), Error);
}

TEST_CASE("backward examples") {
  Graph g;
  const NodeId x = g.leaf(Tensor::vector({1, 2, 3}));
  const NodeId root = ops::sum(g, ops::mul(g, x, x));
  CHECK(backward(g, root, false).tensor(x) == Tensor::vector({2, 4, 6}));

  Graph g2;
  const NodeId y = g2.leaf(Tensor::vector({1, 2}));
  const NodeId cube = ops::sum(g2, ops::mul(g2, y, ops::mul(g2, y, y)));
  const GradMap first = backward(g2, cube, true);
  CHECK(g2.value(first.node(y)) == Tensor::vector({3, 12}));
  const NodeId s = ops::sum(g2, first.node(y));
  const Tensor second = backward(g2, s, false).tensor(y);
  CHECK(second[0] == doctest::Approx(6.0));
  CHECK(second[1] == doctest::Approx(12.0));
}

TEST_CASE("backward rejects non-scalar root") {
  Graph g;
  const NodeId x = g.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(backward(g, x, false), Error);
}

TEST_CASE("non-differentiable backward leaves the graph unchanged") {
  Graph g;
  const NodeId x = g.leaf(Tensor::vector({1, 2}));
  const NodeId root = ops::sum(g, ops::exp(g, x));
  const std::size_t before = g.size();
  const GradMap gm = backward(g, root, false);
  CHECK(g.size() == before);
  CHECK(gm.tensor(x)[1] == doctest::Approx(std::exp(2.0)));
  CHECK_THROWS_AS(gm.node(x), Error);
}

TEST_CASE("unreached nodes have zero gradient") {
  Graph g;
  const NodeId x = g.leaf(Tensor::vector({1, 2}));
  const NodeId unused = g.leaf(Tensor::vector({5, 5, 5}));
  const NodeId root = ops::sum(g, x);
  const GradMap gm = backward(g, root, false);
  CHECK_FALSE(gm.contains(unused));
  CHECK(gm.tensor(unused) == Tensor({3}));
}

TEST_CASE("targets prune but do not change gradients") {
  std::mt19937_64 rng(3);
  Graph g;
  const NodeId w = g.leaf(random_tensor({3, 4}, rng));
  const NodeId x = g.leaf(random_tensor({4, 2}, rng));
  const NodeId root = ops::sum(g, ops::sigmoid(g, ops::matmul(g, w, x)));
  const Tensor full = backward(g, root, false).tensor(x);
  const std::array<NodeId, 1> t{x};
  const GradMap pruned = backward(g, root, false, t);
  CHECK(pruned.tensor(x) == full);
  CHECK_FALSE(pruned.contains(w));
}

TEST_CASE("first-order gradients match finite differences for every op") {
  std::mt19937_64 rng(11);
  auto one = [&](Shape s, double lo = -1, double hi = 1) {
    return std::vector<Tensor>{random_tensor(std::move(s), rng, lo, hi)};
  };

  SUBCASE("matmul, all transpose cases") {
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        const Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
        const Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
        check_first_order({random_tensor(sa, rng), random_tensor(sb, rng)},
                          [=](Graph& g, std::span<const NodeId> in) {
                            return ops::matmul(g, in[0], in[1], ta, tb);
                          });
      }
  }
  SUBCASE("binary elementwise") {
    const auto two = std::vector<Tensor>{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng, 0.5, 2)};
    check_first_order(two, [](Graph& g, auto in) { return ops::add(g, in[0], in[1]); });
    check_first_order(two, [](Graph& g, auto in) { return ops::sub(g, in[0], in[1]); });
    check_first_order(two, [](Graph& g, auto in) { return ops::mul(g, in[0], in[1]); });
    check_first_order(two, [](Graph& g, auto in) { return ops::div(g, in[0], in[1]); });
  }
  SUBCASE("unary") {
    check_first_order(one({7}), [](Graph& g, auto in) { return ops::scale(g, in[0], -2.5); });
    check_first_order(one({7}), [](Graph& g, auto in) { return ops::affine(g, in[0], 0.3, 4); });
    check_first_order({away_from_zero(one({9})[0])},
                      [](Graph& g, auto in) { return ops::relu(g, in[0]); });
    check_first_order({away_from_zero(one({9})[0])},
                      [](Graph& g, auto in) { return ops::leaky_relu(g, in[0], 0.2); });
    check_first_order({away_from_zero(one({9})[0])},
                      [](Graph& g, auto in) { return ops::abs(g, in[0]); });
    check_first_order(one({9}, -4, 4), [](Graph& g, auto in) { return ops::sigmoid(g, in[0]); });
    check_first_order(one({9}, -4, 4), [](Graph& g, auto in) { return ops::softplus(g, in[0]); });
    check_first_order(one({9}, 0.2, 3), [](Graph& g, auto in) { return ops::log(g, in[0]); });
    check_first_order(one({9}, -2, 2), [](Graph& g, auto in) { return ops::exp(g, in[0]); });
    check_first_order(one({9}, 0.2, 3), [](Graph& g, auto in) { return ops::sqrt(g, in[0]); });
  }
  SUBCASE("reductions and shape ops") {
    check_first_order(one({3, 4}), [](Graph& g, auto in) { return ops::sum(g, in[0]); });
    check_first_order(one({3, 4}), [](Graph& g, auto in) { return ops::mean(g, in[0]); });
    check_first_order(one({}), [](Graph& g, auto in) { return ops::broadcast(g, in[0], {2, 3}); });
    check_first_order(one({3, 4}), [](Graph& g, auto in) { return ops::reshape(g, in[0], {2, 6}); });
    check_first_order(one({3, 4}), [](Graph& g, auto in) { return ops::row_sum(g, in[0]); });
    check_first_order(one({3}), [](Graph& g, auto in) { return ops::expand_rows(g, in[0], 4); });
    auto idx = std::make_shared<std::vector<kernels::Index>>(
        std::vector<kernels::Index>{3, -1, 0, 0, 5, 2, 2, 1});
    check_first_order(one({6}), [=](Graph& g, auto in) { return ops::gather(g, in[0], idx, {8}); });
    check_first_order(one({8}), [=](Graph& g, auto in) {
      return ops::scatter_add(g, in[0], idx, {6});
    });
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Shape sa{2, 3, 2}, sb{2, 3, 2};
      sb[axis] = 1;
      check_first_order({random_tensor(sa, rng), random_tensor(sb, rng)},
                        [=](Graph& g, std::span<const NodeId> in) {
                          return ops::concat(g, in, axis);
                        });
    }
    auto mask = std::make_shared<const Tensor>(Tensor::vector({0, 2, 2, 0, 2}));
    check_first_order(one({5}), [=](Graph& g, auto in) { return ops::dropout(g, in[0], mask); });
  }
  SUBCASE("spatial ops") {
    // Distinct values keep maxpool away from ties.
    Tensor x({2, 2, 4, 4});
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>((i * 37) % 64);
    x = Tensor({2, 2, 4, 4}, v);
    check_first_order({x}, [](Graph& g, auto in) { return ops::maxpool2d(g, in[0], 2, 2); });
    check_first_order(one({1, 2, 3, 3}), [](Graph& g, auto in) { return ops::pad2d(g, in[0], 1); });
    for (std::size_t stride : {1, 2})
      for (std::size_t pad : {0, 1})
        check_first_order({random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng),
                           random_tensor({4}, rng)},
                          [=](Graph& g, std::span<const NodeId> in) {
                            return ops::conv2d(g, in[0], in[1], in[2], stride, pad);
                          });
    check_first_order({random_tensor({2, 3, 4, 4}, rng), random_tensor({3, 2, 4, 4}, rng),
                       random_tensor({2}, rng)},
                      [](Graph& g, std::span<const NodeId> in) {
                        return ops::conv_transpose2d(g, in[0], in[1], in[2], 2, 1);
                      });
  }
}

TEST_CASE("composite op kinds dispatch through apply") {
  std::mt19937_64 rng(5);
  Graph g;
  const NodeId x = g.leaf(random_tensor({1, 2, 4, 4}, rng));
  const NodeId w = g.leaf(random_tensor({3, 2, 3, 3}, rng));
  OpAttrs at;
  at.geom.stride = 1;
  at.geom.pad = 1;
  const NodeId c = g.apply(OpKind::kConv2d, {x, w}, at);
  CHECK(g.shape(c) == Shape{1, 3, 4, 4});
  const NodeId p = g.apply(OpKind::kPad, {x}, at);
  CHECK(g.shape(p) == Shape{1, 2, 6, 6});
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  std::mt19937_64 rng(21);
  const Tensor x = random_tensor({2, 3, 6, 6}, rng);
  const Tensor y = random_tensor({2, 4, 3, 3}, rng);
  const Tensor w = random_tensor({4, 3, 2, 2}, rng);
  Graph g;
  const NodeId cx = ops::conv2d(g, g.constant(x), g.constant(w), kNoNode, 2, 0);
  // conv_transpose expects w as [Cin, Cout, k, k] where Cin is the conv output.
  const NodeId ty = ops::conv_transpose2d(g, g.constant(y), g.constant(w), kNoNode, 2, 0);
  CHECK(dot(g.value(cx), y) == doctest::Approx(dot(x, g.value(ty))).epsilon(1e-12));
}

TEST_CASE("second-order gradients match finite differences") {
  std::mt19937_64 rng(17);
  const Tensor w1 = random_tensor({4, 3}, rng);
  const Tensor w2 = random_tensor({2, 4}, rng);
  SUBCASE("smooth mlp") {
    check_second_order(random_tensor({3, 2}, rng), [&](Graph& g, std::span<const NodeId> in) {
      const NodeId h = ops::sigmoid(g, ops::matmul(g, g.constant(w1), in[0]));
      return ops::softplus(g, ops::matmul(g, g.constant(w2), h));
    });
  }
  SUBCASE("elementwise chain") {
    check_second_order(random_tensor({6}, rng, 0.3, 2.0), [](Graph& g, std::span<const NodeId> in) {
      const NodeId a = ops::log(g, ops::add(g, in[0], ops::sqrt(g, in[0])));
      return ops::div(g, ops::exp(g, ops::scale(g, a, 0.5)), ops::affine(g, in[0], 1, 1));
    });
  }
  SUBCASE("relu conv with pooling") {
    const Tensor w = random_tensor({2, 1, 3, 3}, rng);
    check_second_order(away_from_zero(random_tensor({1, 1, 4, 4}, rng)),
                       [&](Graph& g, std::span<const NodeId> in) {
                         const NodeId c = ops::conv2d(g, in[0], g.constant(w), kNoNode, 1, 1);
                         const NodeId sq = ops::mul(g, c, c);
                         return ops::maxpool2d(g, ops::leaky_relu(g, sq, 0.1), 2, 2);
                       });
  }
}

TEST_CASE("backward is linear in the root") {
  std::mt19937_64 rng(23);
  const Tensor x0 = random_tensor({5}, rng);
  Graph g;
  const NodeId x = g.leaf(x0);
  const NodeId f = ops::sum(g, ops::sigmoid(g, ops::mul(g, x, x)));
  const NodeId h = ops::sum(g, ops::exp(g, x));
  const double a = 1.7, b = -0.4;
  const NodeId comb = ops::add(g, ops::scale(g, f, a), ops::scale(g, h, b));
  const Tensor lhs = backward(g, comb, false).tensor(x);
  const Tensor rhs = a * backward(g, f, false).tensor(x) + b * backward(g, h, false).tensor(x);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("graph replay is bit-exact") {
  std::mt19937_64 rng(29);
  Graph g;
  const NodeId x = g.leaf(random_tensor({1, 2, 6, 6}, rng));
  const NodeId w = g.leaf(random_tensor({3, 2, 3, 3}, rng));
  const NodeId c = ops::relu(g, ops::conv2d(g, x, w, kNoNode, 1, 1));
  const NodeId root = ops::mean(g, ops::maxpool2d(g, c, 2, 2));
  const GradMap gm = backward(g, root, true);
  ops::sum(g, ops::mul(g, gm.node(w), gm.node(w)));
  CHECK(g.replay_matches());
}

TEST_CASE("finite_diff_gradient examples") {
  const Tensor x = Tensor::vector({3, 4});
  const Tensor ones = finite_diff_gradient(
      [](const Tensor& t) {
        double s = 0;
        for (double v : t.data()) s += v;
        return s;
      },
      x, 1e-5);
  CHECK(max_abs_diff(ones, Tensor::vector({1, 1})) < 1e-8);
  const Tensor half = finite_diff_gradient([](const Tensor& t) { return 0.5 * dot(t, t); }, x, 1e-5);
  CHECK(max_abs_diff(half, x) < 1e-8);
  CHECK_THROWS_AS(finite_diff_gradient([](const Tensor&) { return 0.0; }, x, 0.0), Error);
}

TEST_CASE("parallel kernels agree bit-exactly with the serial reference") {
  std::mt19937_64 rng(31);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const std::size_t m = 70, n = 45, k = 33;
      const Tensor a = random_tensor({m * k}, rng);
      const Tensor b = random_tensor({k * n}, rng);
      std::vector<double> c1(m * n), c2(m * n);
      kernels::gemm(ta, tb, m, n, k, a.data().data(), b.data().data(), c1.data());
      kernels::reference::gemm(ta, tb, m, n, k, a.data().data(), b.data().data(), c2.data());
      CHECK(c1 == c2);
    }
  const Tensor x = random_tensor({50000}, rng);
  std::vector<kernels::Index> idx(60000);
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = (i % 7 == 0) ? -1 : static_cast<kernels::Index>((i * 7919) % x.size());
  std::vector<double> o1(idx.size()), o2(idx.size());
  kernels::gather(x.data(), idx, o1);
  kernels::reference::gather(x.data(), idx, o2);
  CHECK(o1 == o2);
  std::vector<double> s1(x.size()), s2(x.size());
  kernels::scatter_add(o1, idx, s1);
  kernels::reference::scatter_add(o1, idx, s2);
  CHECK(s1 == s2);
  omp_set_num_threads(saved);
}
