// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gleak {

struct SelfCheck {
  std::string name;
  bool passed = false;
  std::string detail;  // measured value against its tolerance
};

/// Quick oracle and property checks of an installed build: autodiff against
/// finite differences, parallel kernels against the serial reference,
/// Hungarian against brute force, QSGD unbiasedness, analytic inversion and
/// file-format round trips (written under `scratch`).
std::vector<SelfCheck> run_self_checks(std::uint64_t seed, const std::filesystem::path& scratch);

}  // namespace gleak
