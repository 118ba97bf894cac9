// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/igsa.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "gleak/error.hpp"
#include "gleak/rng.hpp"

namespace gleak {

std::vector<double> igsa_layer_weights(std::size_t depth) {
  std::vector<double> w(depth);
  for (std::size_t l = 0; l < depth; ++l) w[l] = 1.0 + 1.0 / static_cast<double>(l + 1);
  return w;
}

void validate(const IgsaConfig& c, const ModelSpec& spec) {
  if (c.num_samples == 0) fail(ErrorCode::kInvalidArgument, "igsa", "num_samples must be positive");
  if (!(c.radius > 0.0)) fail(ErrorCode::kInvalidArgument, "igsa", "radius must be positive");
  const std::size_t depth = parameterized_layers(spec).size();
  if (!c.layer_weights.empty() && c.layer_weights.size() != depth)
    fail(ErrorCode::kInvalidArgument, "igsa",
         std::to_string(c.layer_weights.size()) + " layer weights for " + std::to_string(depth) + " layers");
}

std::vector<Tensor> input_gradient_map(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                                       const Labels& labels) {
  const Tensor flat = loss_gradient(spec, state, x, labels).gradient;
  const auto offsets = layer_offsets(spec);
  std::vector<Tensor> out;
  for (std::size_t l : parameterized_layers(spec)) {
    const auto [b, e] = offsets[l];
    out.emplace_back(Shape{e - b}, std::vector<double>(flat.data().begin() + static_cast<std::ptrdiff_t>(b),
                                                       flat.data().begin() + static_cast<std::ptrdiff_t>(e)));
  }
  return out;
}

std::vector<double> uniform_ball(std::size_t dim, double r, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& e : v) {
      e = nd(rng);
      norm += e * e;
    }
  } while (norm == 0.0);
  const double scale = r * std::pow(u(rng), 1.0 / static_cast<double>(dim)) / std::sqrt(norm);
  for (auto& e : v) e *= scale;
  return v;
}

double compensated_mean(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::kInvalidArgument, "compensated_mean", "no values");
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return (sum + comp) / static_cast<double>(values.size());
}

IgsaScore igsa(const ModelSpec& spec, const ModelState& state, const Tensor& x, const Labels& labels,
               const IgsaConfig& c) {
  validate(c, spec);
  const auto base = input_gradient_map(spec, state, x, labels);
  const std::vector<double> omega = c.layer_weights.empty() ? igsa_layer_weights(base.size()) : c.layer_weights;
  const std::size_t k_s = c.num_samples, depth = base.size();

  // Draws happen serially so the perturbations do not depend on the thread count.
  auto rng = make_rng({c.seed, tag(Stream::kIgsa)});
  std::vector<std::vector<double>> deltas(k_s);
  for (auto& d : deltas) d = uniform_ball(x.size(), c.radius, rng);

  std::vector<double> weighted(k_s);
  std::vector<double> per_layer(k_s * depth);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < k_s; ++k) {
    try {
      Tensor xp = x;
      for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += deltas[k][i];
      const auto moved = input_gradient_map(spec, state, xp, labels);
      double s = 0.0;
      for (std::size_t l = 0; l < depth; ++l) {
        const double n = l2_norm(base[l] - moved[l]);
        per_layer[k * depth + l] = n;
        s += omega[l] * n;
      }
      weighted[k] = s;
    } catch (...) {
#pragma omp critical
      error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  IgsaScore out;
  out.mean_difference = compensated_mean(weighted);
  double var = 0.0;
  for (double w : weighted) var += (w - out.mean_difference) * (w - out.mean_difference);
  out.standard_error = k_s > 1 ? std::sqrt(var / static_cast<double>(k_s - 1) / static_cast<double>(k_s)) : 0.0;
  out.layer_difference.resize(depth);
  std::vector<double> col(k_s);
  for (std::size_t l = 0; l < depth; ++l) {
    for (std::size_t k = 0; k < k_s; ++k) col[k] = per_layer[k * depth + l];
    out.layer_difference[l] = compensated_mean(col);
  }
  if (out.mean_difference < 1e-15) {
    out.raw = kIgsaCap;
    out.saturated = true;
  } else {
    out.raw = std::min(kIgsaCap, 1.0 / out.mean_difference);
  }
  return out;
}

std::vector<double> min_max_normalize(std::span<const double> v, bool* degenerate) {
  std::vector<double> out(v.begin(), v.end());
  bool flat = v.size() < 2;
  if (!flat) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    flat = !(*hi > *lo);
    if (!flat)
      for (auto& e : out) e = (e - *lo) / (*hi - *lo);
  }
  if (degenerate) *degenerate = flat;
  return out;
}

IgsaTrace igsa_trace(const ModelSpec& spec, std::span<const ModelState> snapshots, const Tensor& x,
                     const Labels& labels, const IgsaConfig& c) {
  if (snapshots.empty()) fail(ErrorCode::kInvalidArgument, "igsa_trace", "no snapshots");
  IgsaTrace t;
  for (const auto& s : snapshots) {
    t.scores.push_back(igsa(spec, s, x, labels, c));
    t.raw.push_back(t.scores.back().raw);
  }
  t.normalized = min_max_normalize(t.raw, &t.degenerate);
  return t;
}

}  // namespace gleak
