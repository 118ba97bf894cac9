// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gleak/tensor.hpp"

namespace gleak {

struct MetricConfig {
  double psnr_threshold = 18.0;       // tau_1
  double perceptual_threshold = 0.1;  // tau_2, reserved: no perceptual metric is computed
  double data_range = 1.0;
  std::size_t restarts_for_wsrr = 10;
};

void validate(const MetricConfig& config);

inline constexpr double kPsnrCap = 100.0;
inline constexpr const char* kIndicatorLabel = "PSNR-only";

double mse(const Tensor& a, const Tensor& b);
/// 10 log10(range^2 / MSE), capped at 100 dB.
double psnr(const Tensor& a, const Tensor& b, double data_range = 1.0);

/// Minimum-cost perfect matching on a square cost matrix (row-major n x n).
/// Returns col[i] assigned to row i.
std::vector<std::size_t> hungarian(std::span<const double> cost, std::size_t n);

/// Permutation p minimising sum_i MSE(truth_i, recon_{p[i]}). Both tensors are
/// batches with equal shapes.
std::vector<std::size_t> match_batch(const Tensor& truth, const Tensor& reconstruction);

/// Reorders reconstruction rows so row i is matched to truth row i.
Tensor apply_matching(const Tensor& reconstruction, std::span<const std::size_t> perm);

/// PSNR(x, x') > tau_1 (strict).
bool leakage_indicator(const Tensor& x, const Tensor& x_rec, const MetricConfig& config);

/// Fraction of matched pairs that leak.
double brr(const Tensor& truth, const Tensor& reconstruction, const MetricConfig& config);

/// Fraction of R seeded attack runs in which at least one matched sample leaks.
/// `attack(seed)` returns a reconstruction batch.
double wsrr(const Tensor& truth, const std::function<Tensor(std::uint64_t)>& attack,
            std::size_t restarts, const MetricConfig& config);

struct SampleMetrics {
  double mse = 0.0;
  double psnr = 0.0;
  bool leaked = false;
};

struct MetricsReport {
  std::vector<SampleMetrics> samples;
  double mean_mse = 0.0;
  double mean_psnr = 0.0;
  double brr = 0.0;
  std::optional<double> wsrr;
  std::vector<std::size_t> assignment;
  std::string indicator = kIndicatorLabel;
};

MetricsReport evaluate_reconstruction(const Tensor& truth, const Tensor& reconstruction,
                                      const MetricConfig& config = {});
std::string to_json(const MetricsReport& report);
std::string csv_header();
std::string csv_row(const MetricsReport& report);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace gleak
