// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>

#include "gleak/model.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

/// Samples stored batch-major: x is [N, C, H, W] (or [N, D]), y holds N labels.
struct ClientDataset {
  Tensor x;
  Labels y;
  std::string source;  // generator family or file it came from

  std::size_t size() const { return y.size(); }
  Shape sample_shape() const { return Shape(x.shape().begin() + 1, x.shape().end()); }
  /// Rows `idx` of x, in order.
  Tensor rows(std::span<const std::size_t> idx) const;
  Labels labels(std::span<const std::size_t> idx) const;
  ClientDataset subset(std::span<const std::size_t> idx) const;
  void check() const;
};

/// Stacks per-sample tensors into one batch tensor.
Tensor stack(std::span<const Tensor> samples);
/// Row i of a batch tensor as a [1, ...] tensor.
Tensor batch_row(const Tensor& batch, std::size_t i);

}  // namespace gleak
