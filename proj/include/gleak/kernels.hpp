// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

// Numeric inner loops. The functions in `gleak::kernels` are OpenMP-parallel;
// `gleak::kernels::reference` holds straightforward serial versions that the
// tests and the benchmark compare against. Both evaluate every output element
// with the same accumulation order, so results agree bit-for-bit.
namespace gleak::kernels {

using Index = std::int64_t;

/// C (m x n) = op(A) * op(B), op(A) is m x k, op(B) is k x n. When trans_a is
/// set A is stored k x m; when trans_b is set B is stored n x k.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c);

/// out[i] = idx[i] < 0 ? 0 : x[idx[i]]
void gather(std::span<const double> x, std::span<const Index> idx, std::span<double> out);

/// out[idx[i]] += g[i] for idx[i] >= 0. `out` must be zero-initialised by the caller.
void scatter_add(std::span<const double> g, std::span<const Index> idx, std::span<double> out);

struct ConvGeometry {
  std::size_t batch = 0, channels = 0, height = 0, width = 0;
  std::size_t kernel_h = 0, kernel_w = 0, stride = 1, pad = 0;

  std::size_t out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  std::size_t rows() const { return batch * out_h() * out_w(); }
  std::size_t cols() const { return channels * kernel_h * kernel_w; }
  bool valid() const {
    return kernel_h > 0 && kernel_w > 0 && stride > 0 && height + 2 * pad >= kernel_h &&
           width + 2 * pad >= kernel_w;
  }
  bool operator==(const ConvGeometry&) const = default;
};

/// im2col gather map: entry [r * cols + c] is the flat NCHW input index feeding
/// patch row r = (b, oh, ow) and column c = (ch, kh, kw), or -1 for padding.
std::vector<Index> im2col_index(const ConvGeometry& g);

/// Maps rows (b, oh, ow) x Cout of a conv matmul result to NCHW order:
/// out[((b*Cout + co)*Ho + oh)*Wo + ow] = rows[(b*Ho*Wo + oh*Wo + ow)*Cout + co].
std::vector<Index> rows_to_nchw_index(std::size_t batch, std::size_t out_channels,
                                      std::size_t out_h, std::size_t out_w);

/// Argmax index per pooling window (NCHW input, no padding). Ties resolve to
/// the lowest flat index.
void maxpool_argmax(std::span<const double> x, const ConvGeometry& g,
                    std::span<Index> argmax);

namespace reference {
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c);
void gather(std::span<const double> x, std::span<const Index> idx, std::span<double> out);
void scatter_add(std::span<const double> g, std::span<const Index> idx, std::span<double> out);
}  // namespace reference

}  // namespace gleak::kernels
