// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gleak/fed.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

enum class DefenseKind { kQsgd, kSignSgd, kTopK, kClip, kGauss };

struct DefenseConfig {
  DefenseKind kind = DefenseKind::kClip;
  int bits = 4;           // qsgd
  double fraction = 1.0;  // topk
  double bound = std::numeric_limits<double>::infinity();  // clip
  double multiplier = 0.0;                                  // gauss
  std::uint64_t seed = 0;

  static DefenseConfig qsgd(int bits, std::uint64_t seed = 0);
  static DefenseConfig signsgd();
  static DefenseConfig topk(double fraction);
  static DefenseConfig clip(double bound);
  static DefenseConfig gauss(double multiplier, std::uint64_t seed = 0);
};

void validate(const DefenseConfig& config);

/// Stochastic quantization to s = 2^bits - 1 levels of |v_i| / ||v||_2.
/// Unbiased; a zero vector comes back unchanged.
Tensor qsgd(const Tensor& v, int bits, std::uint64_t seed);
Tensor signsgd(const Tensor& v);
/// Keeps the ceil(k * len) largest magnitudes; ties go to the lowest index.
Tensor topk(const Tensor& v, double fraction);
Tensor clip(const Tensor& v, double bound);
/// v + N(0, (multiplier * c_ref)^2 I).
Tensor gauss(const Tensor& v, double multiplier, std::uint64_t seed, double c_ref = 1.0);

Tensor apply(const Tensor& v, const DefenseConfig& config, double c_ref = 1.0);

/// Left-to-right application. gauss scales by the bound of the nearest
/// clip before it, or 1 when none is chained. Appends each stage to
/// payload.defenses.
GradientPayload apply_chain(GradientPayload payload, std::span<const DefenseConfig> chain);

std::string describe(const DefenseConfig& config);  // e.g. "qsgd(bits=2)"
std::string to_string(DefenseKind kind);
DefenseKind defense_kind_from_string(const std::string& s);

}  // namespace gleak
