// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "gleak/dataset.hpp"

namespace gleak {

enum class FamilyKind { kGaussianBlobs, kProceduralShapes, kTexturesA, kTexturesB };

/// Procedural image families standing in for natural-image datasets.
/// textures_b is textures_a with a shifted frequency band and palette.
struct SyntheticFamily {
  FamilyKind kind = FamilyKind::kGaussianBlobs;
  std::size_t resolution = 16;
  std::size_t channels = 3;
  std::size_t classes = 4;
  std::uint64_t seed = 0;
};

void validate(const SyntheticFamily& family);

/// n samples in [0, 1], shape [n, C, R, R]. Class i % classes for sample i,
/// then a seeded shuffle of the class sequence.
ClientDataset generate_dataset(const SyntheticFamily& family, std::size_t n);

/// Converts class indices {0, 1} to the +-1 labels of a single-logit head.
Labels to_binary_labels(const Labels& classes);

std::string to_string(FamilyKind k);
FamilyKind family_kind_from_string(const std::string& s);

}  // namespace gleak
