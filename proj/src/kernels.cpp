// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/kernels.hpp"

#include <algorithm>

namespace gleak::kernels {

namespace {

constexpr std::size_t kParallelWork = 1 << 15;

// B (rows x cols) -> Bt (cols x rows)
std::vector<double> transposed(const double* b, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = b[r * cols + c];
  return t;
}

// C = op(A) * B with B stored k x n (row-major), the only layout the hot loop
// needs. Accumulation over k is in increasing order for every (i, j).
void gemm_bn(bool trans_a, std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  const long mm = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (long ii = 0; ii < mm; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c) {
  if (trans_b) {
    const std::vector<double> bt = transposed(b, n, k);
    gemm_bn(trans_a, m, n, k, a, bt.data(), c);
  } else {
    gemm_bn(trans_a, m, n, k, a, b, c);
  }
}

void gather(std::span<const double> x, std::span<const Index> idx, std::span<double> out) {
  const long n = static_cast<long>(out.size());
#pragma omp parallel for schedule(static) if (out.size() > kParallelWork)
  for (long i = 0; i < n; ++i) {
    const Index j = idx[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = j < 0 ? 0.0 : x[static_cast<std::size_t>(j)];
  }
}

void scatter_add(std::span<const double> g, std::span<const Index> idx, std::span<double> out) {
  // Serial: targets collide, and a fixed order keeps sums reproducible.
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Index j = idx[i];
    if (j >= 0) out[static_cast<std::size_t>(j)] += g[i];
  }
}

std::vector<Index> im2col_index(const ConvGeometry& g) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), cols = g.cols();
  std::vector<Index> idx(g.rows() * cols);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t row = (b * oh + y) * ow + x;
        Index* dst = idx.data() + row * cols;
        for (std::size_t ch = 0; ch < g.channels; ++ch)
          for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
              const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
              const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
              Index v = -1;
              if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                  ix < static_cast<long>(g.width)) {
                v = static_cast<Index>(((b * g.channels + ch) * g.height +
                                        static_cast<std::size_t>(iy)) * g.width +
                                       static_cast<std::size_t>(ix));
              }
              *dst++ = v;
            }
      }
  return idx;
}

std::vector<Index> rows_to_nchw_index(std::size_t batch, std::size_t out_channels,
                                      std::size_t out_h, std::size_t out_w) {
  std::vector<Index> idx(batch * out_channels * out_h * out_w);
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < out_channels; ++co)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x)
          idx[o++] = static_cast<Index>(((b * out_h + y) * out_w + x) * out_channels + co);
  return idx;
}

void maxpool_argmax(std::span<const double> x, const ConvGeometry& g, std::span<Index> argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  std::size_t o = 0;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t ch = 0; ch < g.channels; ++ch) {
      const std::size_t plane = (b * g.channels + ch) * g.height * g.width;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          std::size_t best = plane + (y * g.stride) * g.width + xo * g.stride;
          for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
              const std::size_t j = plane + (y * g.stride + ky) * g.width + xo * g.stride + kx;
              if (x[j] > x[best]) best = j;
            }
          argmax[o++] = static_cast<Index>(best);
        }
    }
}

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
}

void gather(std::span<const double> x, std::span<const Index> idx, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = idx[i] < 0 ? 0.0 : x[static_cast<std::size_t>(idx[i])];
}

void scatter_add(std::span<const double> g, std::span<const Index> idx, std::span<double> out) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (idx[i] >= 0) out[static_cast<std::size_t>(idx[i])] += g[i];
}

}  // namespace reference

}  // namespace gleak::kernels
