// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "gleak/model.hpp"

namespace gleak {

struct JacobianProbeConfig {
  double fd_step = 1e-5;    // central differences for the Jacobian columns
  double epsilon = 1e-4;    // displacement along the probed direction
  double rank_tol = 1e-7;   // singular values below rank_tol * sigma_max count as zero
};

struct JacobianProbe {
  std::size_t parameters = 0;   // p
  std::size_t input_dim = 0;    // B * D
  std::vector<double> singular_values;  // descending, min(p, B*D) of them
  std::size_t numerical_rank = 0;
  Tensor direction;             // unit right singular vector of the smallest singular value
  double relative_change = 0.0; // ||Phi(x) - Phi(x + eps d)|| / ||Phi(x)||
};

/// d(flat loss gradient) / d(batch), [p, B*D], by central differences.
Tensor gradient_jacobian(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                         const Labels& labels, double fd_step);

/// Rank of the input-to-gradient Jacobian and the least sensitive input
/// direction. When p < B*D the direction lies in the null space.
JacobianProbe probe_jacobian(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                             const Labels& labels, const JacobianProbeConfig& config = {});

}  // namespace gleak
