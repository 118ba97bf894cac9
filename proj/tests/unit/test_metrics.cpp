// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gleak/dataset.hpp"
#include "gleak/error.hpp"
#include "gleak/metrics.hpp"
#include "test_util.hpp"

using namespace gleak;
using gleak::testing::random_tensor;

namespace {

double assignment_cost(const std::vector<double>& cost, std::size_t n,
                       const std::vector<std::size_t>& perm) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += cost[i * n + perm[i]];
  return s;
}

double brute_force_cost(const std::vector<double>& cost, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do best = std::min(best, assignment_cost(cost, n, perm));
  while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& p) {
  return apply_matching(t, p);
}

}  // namespace

TEST_CASE("psnr") {
  const Tensor a = Tensor::vector({0.1, 0.2, 0.3, 0.4});
  CHECK(psnr(a, a) == kPsnrCap);
  const Tensor b = Tensor::vector({0.2, 0.1, 0.4, 0.3});  // every diff is 0.1
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, b) == psnr(b, a));

  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({3, 8, 8}, rng, 0, 1), y = random_tensor({3, 8, 8}, rng, 0, 1);
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m += (x[i] - y[i]) * (x[i] - y[i]);
  m /= static_cast<double>(x.size());
  CHECK(psnr(x, y) == doctest::Approx(-10.0 * std::log10(m)).epsilon(1e-12));
  CHECK(psnr(x, y, 2.0) > psnr(x, y, 1.0));
  CHECK_THROWS_AS(psnr(x, Tensor({3, 8})), Error);
}

TEST_CASE("hungarian matches brute force on every batch size up to 6") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> small(0, 3);
  for (std::size_t n = 1; n <= 6; ++n) {
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<double> cost(n * n);
      // Half the trials use small integers to force ties.
      for (auto& c : cost) c = trial % 2 ? u(rng) : small(rng);
      const auto perm = hungarian(cost, n);
      std::vector<std::size_t> sorted = perm;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < n; ++i) REQUIRE(sorted[i] == i);
      CHECK(assignment_cost(cost, n, perm) == doctest::Approx(brute_force_cost(cost, n)).epsilon(1e-12));
    }
  }
  CHECK(hungarian({}, 0).empty());
  CHECK_THROWS_AS(hungarian(std::vector<double>(5), 2), Error);
}

TEST_CASE("match_batch") {
  std::mt19937_64 rng(2);
  const Tensor truth = random_tensor({5, 1, 4, 4}, rng, 0, 1);
  const std::vector<std::size_t> p{3, 0, 4, 1, 2};
  const Tensor rec = permute_rows(truth, p);  // rec row i = truth row p[i]
  const auto m = match_batch(truth, rec);
  for (std::size_t i = 0; i < 5; ++i) CHECK(p[m[i]] == i);
  CHECK(apply_matching(rec, m) == truth);

  const Tensor one = random_tensor({1, 3}, rng, 0, 1);
  CHECK(match_batch(one, random_tensor({1, 3}, rng, 0, 1)) == std::vector<std::size_t>{0});

  const Tensor noisy = random_tensor({5, 1, 4, 4}, rng, 0, 1);
  const auto mn = match_batch(truth, noisy);
  double matched = 0.0, ident = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    matched += mse(batch_row(truth, i), batch_row(noisy, mn[i]));
    ident += mse(batch_row(truth, i), batch_row(noisy, i));
  }
  CHECK(matched <= ident + 1e-15);
}

TEST_CASE("leakage indicator") {
  MetricConfig c;
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({3, 16, 16}, rng, 0, 1);
  CHECK(leakage_indicator(x, x, c));
  CHECK_FALSE(leakage_indicator(x, random_tensor({3, 16, 16}, rng, 0, 1), c));

  // PSNR equal to tau_1 does not leak.
  const Tensor a = Tensor::vector({0.0, 0.0});
  const Tensor b = Tensor::vector({0.1, 0.1});  // psnr 20
  c.psnr_threshold = psnr(a, b);
  CHECK_FALSE(leakage_indicator(a, b, c));
  c.psnr_threshold = std::nextafter(psnr(a, b), 0.0);
  CHECK(leakage_indicator(a, b, c));
}

TEST_CASE("brr and wsrr definitional identities") {
  const MetricConfig c;
  std::mt19937_64 rng(4);
  const Tensor truth = random_tensor({4, 2, 4, 4}, rng, 0, 1);
  const Tensor noise = random_tensor({4, 2, 4, 4}, rng, 0, 1);
  CHECK(brr(truth, truth, c) == 1.0);
  CHECK(brr(truth, noise, c) == 0.0);

  // Two exact rows, two noise rows.
  Tensor half = truth;
  for (std::size_t i = half.size() / 2; i < half.size(); ++i) half[i] = noise[i];
  const MetricsReport r = evaluate_reconstruction(truth, half, c);
  CHECK(r.brr == 0.5);
  double leaked = 0.0;
  for (const auto& s : r.samples) leaked += s.leaked;
  CHECK(r.brr == leaked / 4.0);
  CHECK(r.indicator == "PSNR-only");

  // Simultaneous permutation of both batches leaves brr alone.
  const std::vector<std::size_t> p{2, 0, 3, 1};
  CHECK(brr(permute_rows(truth, p), permute_rows(half, p), c) == r.brr);

  CHECK(wsrr(truth, [&](std::uint64_t) { return truth; }, 10, c) == 1.0);
  CHECK(wsrr(truth, [&](std::uint64_t) { return noise; }, 10, c) == 0.0);
  CHECK(wsrr(truth, [&](std::uint64_t s) { return s % 2 ? half : noise; }, 10, c) == 0.5);
  CHECK_THROWS_AS(wsrr(truth, [&](std::uint64_t) { return truth; }, 0, c), Error);

  // wsrr equals the per-run any-leak rate for the same seeds.
  std::size_t any = 0;
  auto runner = [&](std::uint64_t s) { return s % 3 == 0 ? half : noise; };
  for (std::uint64_t s = 0; s < 9; ++s) any += brr(truth, runner(s), c) > 0.0;
  CHECK(wsrr(truth, runner, 9, c) == static_cast<double>(any) / 9.0);
}

TEST_CASE("metrics report serialization") {
  std::mt19937_64 rng(1);
  const Tensor t = random_tensor({2, 3}, rng, 0, 1);
  MetricsReport r = evaluate_reconstruction(t, t);
  r.wsrr = 1.0;
  const std::string j = to_json(r);
  CHECK(j.find("\"indicator\":\"PSNR-only\"") != std::string::npos);
  CHECK(j.find("\"brr\":1.0") != std::string::npos);
  CHECK(csv_row(r).find(",PSNR-only") != std::string::npos);
  MetricConfig bad;
  bad.data_range = 0.0;
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{10, 20, 30, 40, 50};
  const std::vector<double> c{5, 4, 3, 2, 1};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, c) == doctest::Approx(-1.0));
  const std::vector<double> ties{1, 1, 2, 2, 3};
  // Average ranks 1.5,1.5,3.5,3.5,5 against 1..5.
  CHECK(spearman(a, ties) == doctest::Approx(0.9486832980505138).epsilon(1e-12));
}
