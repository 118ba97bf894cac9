// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "gleak/model.hpp"

namespace gleak {

/// Input-gradient smoothness: the inverse of the mean weighted change of the
/// per-layer loss gradient when the probe input moves inside a small ball.
struct IgsaConfig {
  std::size_t num_samples = 256;  // K_s
  double radius = 1e-3;
  std::vector<double> layer_weights;  // empty: igsa_layer_weights(depth)
  std::uint64_t seed = 0;
};

inline constexpr double kIgsaCap = 1e15;

/// omega_l = 1 + 1/l for parameterised layer l = 1 (shallowest) .. L.
std::vector<double> igsa_layer_weights(std::size_t depth);

void validate(const IgsaConfig& config, const ModelSpec& spec);

struct IgsaScore {
  double raw = 0.0;
  bool saturated = false;               // mean difference below 1e-15; raw == kIgsaCap
  double mean_difference = 0.0;         // E ||Phi(x) - Phi(x + dx)||_omega
  double standard_error = 0.0;          // of mean_difference
  std::vector<double> layer_difference; // mean unweighted norm per layer
};

/// Loss gradient per parameterised layer (weights and bias flattened
/// together), shallow to deep.
std::vector<Tensor> input_gradient_map(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                                       const Labels& labels);

IgsaScore igsa(const ModelSpec& spec, const ModelState& state, const Tensor& x, const Labels& labels,
               const IgsaConfig& config);

/// Uniform draw from the L2 ball of radius r in `dim` dimensions.
std::vector<double> uniform_ball(std::size_t dim, double r, std::mt19937_64& rng);

/// Neumaier-compensated mean; the result does not depend on the order of
/// `values` beyond the last few ulps.
double compensated_mean(std::span<const double> values);

struct IgsaTrace {
  std::vector<IgsaScore> scores;
  std::vector<double> raw;
  std::vector<double> normalized;  // min-max over the run
  bool degenerate = false;         // one round or constant scores: normalized == raw
};

/// Scores every snapshot against the same probe batch, then normalises.
IgsaTrace igsa_trace(const ModelSpec& spec, std::span<const ModelState> snapshots, const Tensor& x,
                     const Labels& labels, const IgsaConfig& config);

/// Min-max normalisation; degenerate inputs are returned unchanged.
std::vector<double> min_max_normalize(std::span<const double> values, bool* degenerate = nullptr);

}  // namespace gleak
