// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "gleak/error.hpp"
#include "gleak/rng.hpp"

namespace gleak {
namespace {

using Image = std::vector<double>;  // C * R * R

struct Canvas {
  std::size_t c, r;
  Image px;
  Canvas(std::size_t channels, std::size_t res) : c(channels), r(res), px(channels * res * res, 0.0) {}
  double& at(std::size_t ch, std::size_t i, std::size_t j) { return px[(ch * r + i) * r + j]; }
};

// Per-class colour, fixed by the family seed so every sample of a class
// shares it.
std::vector<double> class_colour(const SyntheticFamily& f, std::size_t cls, double lo, double hi) {
  auto rng = make_rng({f.seed, tag(Stream::kData), 0xC010u, cls});
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> col(f.channels);
  for (auto& v : col) v = u(rng);
  return col;
}

void blobs(const SyntheticFamily& f, std::size_t cls, std::mt19937_64& rng, Canvas& cv) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto col = class_colour(f, cls, 0.2, 1.0);
  const double res = static_cast<double>(f.resolution);
  const double bg = 0.1 * u(rng);
  for (auto& p : cv.px) p = bg;
  const int count = 1 + static_cast<int>(cls % 3);
  for (int b = 0; b < count; ++b) {
    const double ci = res * (0.2 + 0.6 * u(rng)), cj = res * (0.2 + 0.6 * u(rng));
    const double sigma = res * (0.08 + 0.1 * u(rng));
    for (std::size_t i = 0; i < cv.r; ++i)
      for (std::size_t j = 0; j < cv.r; ++j) {
        const double di = static_cast<double>(i) - ci, dj = static_cast<double>(j) - cj;
        const double w = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
        for (std::size_t ch = 0; ch < cv.c; ++ch) cv.at(ch, i, j) += w * col[ch];
      }
  }
}

void shapes(const SyntheticFamily& f, std::size_t cls, std::mt19937_64& rng, Canvas& cv) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto col = class_colour(f, cls, 0.5, 1.0);
  const double res = static_cast<double>(f.resolution);
  // Vertical background ramp.
  const double top = 0.3 * u(rng), bottom = 0.3 * u(rng);
  const double ci = res * (0.35 + 0.3 * u(rng)), cj = res * (0.35 + 0.3 * u(rng));
  const double size = res * (0.18 + 0.12 * u(rng));
  for (std::size_t i = 0; i < cv.r; ++i)
    for (std::size_t j = 0; j < cv.r; ++j) {
      const double di = static_cast<double>(i) + 0.5 - ci, dj = static_cast<double>(j) + 0.5 - cj;
      bool inside = false;
      switch (cls % 4) {
        case 0: inside = di * di + dj * dj <= size * size; break;                        // disc
        case 1: inside = std::abs(di) <= size && std::abs(dj) <= size; break;            // square
        case 2: inside = di <= size && di >= -size && std::abs(dj) <= (di + size) / 2; break;  // triangle
        default: inside = (std::abs(di) <= size / 3 && std::abs(dj) <= size) ||
                          (std::abs(dj) <= size / 3 && std::abs(di) <= size);            // cross
      }
      const double t = static_cast<double>(i) / std::max(1.0, res - 1);
      for (std::size_t ch = 0; ch < cv.c; ++ch)
        cv.at(ch, i, j) = inside ? col[ch] : (1 - t) * top + t * bottom;
    }
}

// Sum of two oriented gratings; orientation is set by the class, the
// frequency band and palette by the family variant.
void textures(const SyntheticFamily& f, std::size_t cls, std::mt19937_64& rng, Canvas& cv, bool shifted) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double f_lo = shifted ? 0.22 : 0.06, f_hi = shifted ? 0.35 : 0.14;  // cycles per pixel
  const auto col = class_colour(f, cls, shifted ? 0.0 : 0.4, shifted ? 0.6 : 1.0);
  const double pi = std::numbers::pi;
  const double theta = pi * (static_cast<double>(cls) + 0.3 * u(rng)) / static_cast<double>(f.classes);
  const double freq = f_lo + (f_hi - f_lo) * u(rng);
  const double phase = 2 * pi * u(rng), phase2 = 2 * pi * u(rng);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t i = 0; i < cv.r; ++i)
    for (std::size_t j = 0; j < cv.r; ++j) {
      const double a = static_cast<double>(i) * ct + static_cast<double>(j) * st;
      const double b = -static_cast<double>(i) * st + static_cast<double>(j) * ct;
      const double v = 0.5 + 0.35 * std::sin(2 * pi * freq * a + phase) + 0.15 * std::sin(pi * freq * b + phase2);
      for (std::size_t ch = 0; ch < cv.c; ++ch) cv.at(ch, i, j) = v * col[ch] + (shifted ? 0.3 : 0.0);
    }
}

}  // namespace

void validate(const SyntheticFamily& f) {
  if (f.resolution < 2) fail(ErrorCode::kInvalidSpec, "synthetic", "resolution must be at least 2");
  if (f.channels == 0 || f.classes == 0)
    fail(ErrorCode::kInvalidSpec, "synthetic", "channels and classes must be positive");
}

ClientDataset generate_dataset(const SyntheticFamily& f, std::size_t n) {
  validate(f);
  std::vector<std::size_t> cls(n);
  for (std::size_t i = 0; i < n; ++i) cls[i] = i % f.classes;
  auto shuffle = make_rng({f.seed, tag(Stream::kData), 0x5u, n});
  std::shuffle(cls.begin(), cls.end(), shuffle);

  const std::size_t per = f.channels * f.resolution * f.resolution;
  std::vector<double> data;
  data.reserve(n * per);
  Labels y;
  y.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = make_rng({f.seed, tag(Stream::kData), static_cast<std::uint64_t>(f.kind), i});
    Canvas cv(f.channels, f.resolution);
    switch (f.kind) {
      case FamilyKind::kGaussianBlobs: blobs(f, cls[i], rng, cv); break;
      case FamilyKind::kProceduralShapes: shapes(f, cls[i], rng, cv); break;
      case FamilyKind::kTexturesA: textures(f, cls[i], rng, cv, false); break;
      case FamilyKind::kTexturesB: textures(f, cls[i], rng, cv, true); break;
    }
    for (double p : cv.px) data.push_back(std::clamp(p, 0.0, 1.0));
    y.push_back(static_cast<int>(cls[i]));
  }
  return {Tensor({n, f.channels, f.resolution, f.resolution}, std::move(data)), std::move(y),
          to_string(f.kind)};
}

Labels to_binary_labels(const Labels& classes) {
  Labels out;
  out.reserve(classes.size());
  for (int c : classes) {
    if (c != 0 && c != 1) fail(ErrorCode::kInvalidArgument, "to_binary_labels", "class " + std::to_string(c));
    out.push_back(c == 1 ? 1 : -1);
  }
  return out;
}

std::string to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::kGaussianBlobs: return "gaussian_blobs";
    case FamilyKind::kProceduralShapes: return "procedural_shapes";
    case FamilyKind::kTexturesA: return "textures_a";
    case FamilyKind::kTexturesB: return "textures_b";
  }
  return "?";
}

FamilyKind family_kind_from_string(const std::string& s) {
  for (auto k : {FamilyKind::kGaussianBlobs, FamilyKind::kProceduralShapes, FamilyKind::kTexturesA,
                 FamilyKind::kTexturesB})
    if (to_string(k) == s) return k;
  fail(ErrorCode::kConfig, "synthetic", "unknown family '" + s + "'");
}

}  // namespace gleak
