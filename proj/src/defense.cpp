// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "gleak/error.hpp"
#include "gleak/rng.hpp"

namespace gleak {

DefenseConfig DefenseConfig::qsgd(int bits, std::uint64_t seed) {
  DefenseConfig c;
  c.kind = DefenseKind::kQsgd;
  c.bits = bits;
  c.seed = seed;
  return c;
}
DefenseConfig DefenseConfig::signsgd() {
  DefenseConfig c;
  c.kind = DefenseKind::kSignSgd;
  return c;
}
DefenseConfig DefenseConfig::topk(double fraction) {
  DefenseConfig c;
  c.kind = DefenseKind::kTopK;
  c.fraction = fraction;
  return c;
}
DefenseConfig DefenseConfig::clip(double bound) {
  DefenseConfig c;
  c.kind = DefenseKind::kClip;
  c.bound = bound;
  return c;
}
DefenseConfig DefenseConfig::gauss(double multiplier, std::uint64_t seed) {
  DefenseConfig c;
  c.kind = DefenseKind::kGauss;
  c.multiplier = multiplier;
  c.seed = seed;
  return c;
}

void validate(const DefenseConfig& c) {
  switch (c.kind) {
    case DefenseKind::kQsgd:
      if (c.bits < 1 || c.bits > 4) fail(ErrorCode::kConfig, "qsgd", "bits must be in 1..4");
      break;
    case DefenseKind::kTopK:
      if (!(c.fraction > 0.0 && c.fraction <= 1.0))
        fail(ErrorCode::kConfig, "topk", "fraction must be in (0, 1]");
      break;
    case DefenseKind::kClip:
      if (!(c.bound > 0.0)) fail(ErrorCode::kConfig, "clip", "bound must be > 0");
      break;
    case DefenseKind::kGauss:
      if (!(c.multiplier >= 0.0) || !std::isfinite(c.multiplier))
        fail(ErrorCode::kConfig, "gauss", "multiplier must be finite and >= 0");
      break;
    case DefenseKind::kSignSgd:
      break;
  }
}

Tensor qsgd(const Tensor& v, int bits, std::uint64_t seed) {
  if (bits < 1 || bits > 30) fail(ErrorCode::kInvalidArgument, "qsgd", "bits out of range");
  const double norm = l2_norm(v);
  if (norm == 0.0) return v;
  const double s = static_cast<double>((1u << bits) - 1u);
  auto rng = make_rng({seed, tag(Stream::kDefense)});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = std::abs(v[i]) / norm * s;
    double level = std::floor(r);
    const double p = r - level;
    // Draw for every coordinate so the stream position never depends on the data.
    if (u(rng) < p) level += 1.0;
    const double sign = v[i] > 0.0 ? 1.0 : (v[i] < 0.0 ? -1.0 : 0.0);
    out[i] = norm * sign * (level / s);
  }
  return out;
}

Tensor signsgd(const Tensor& v) {
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? 1.0 : (v[i] < 0.0 ? -1.0 : 0.0);
  return out;
}

Tensor topk(const Tensor& v, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    fail(ErrorCode::kInvalidArgument, "topk", "fraction must be in (0, 1]");
  const auto keep = std::min(
      v.size(), static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(v.size()))));
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](auto a, auto b) { return std::abs(v[a]) > std::abs(v[b]); });
  Tensor out(v.shape());
  for (std::size_t i = 0; i < keep; ++i) out[idx[i]] = v[idx[i]];
  return out;
}

Tensor clip(const Tensor& v, double bound) {
  if (!(bound > 0.0)) fail(ErrorCode::kInvalidArgument, "clip", "bound must be > 0");
  const double norm = l2_norm(v);
  if (norm <= bound) return v;
  return (bound / norm) * v;
}

Tensor gauss(const Tensor& v, double multiplier, std::uint64_t seed, double c_ref) {
  if (!(multiplier >= 0.0)) fail(ErrorCode::kInvalidArgument, "gauss", "multiplier must be >= 0");
  const double sigma = multiplier * c_ref;
  if (sigma == 0.0) return v;
  auto rng = make_rng({seed, tag(Stream::kDefense), 1});
  std::normal_distribution<double> n(0.0, sigma);
  Tensor out = v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += n(rng);
  return out;
}

Tensor apply(const Tensor& v, const DefenseConfig& c, double c_ref) {
  validate(c);
  switch (c.kind) {
    case DefenseKind::kQsgd:
      return qsgd(v, c.bits, c.seed);
    case DefenseKind::kSignSgd:
      return signsgd(v);
    case DefenseKind::kTopK:
      return topk(v, c.fraction);
    case DefenseKind::kClip:
      return clip(v, c.bound);
    case DefenseKind::kGauss:
      return gauss(v, c.multiplier, c.seed, c_ref);
  }
  fail(ErrorCode::kInvalidArgument, "defense", "unknown kind");
}

GradientPayload apply_chain(GradientPayload payload, std::span<const DefenseConfig> chain) {
  if (chain.empty()) fail(ErrorCode::kInvalidArgument, "apply_chain", "empty defense chain");
  double c_ref = 1.0;
  for (const auto& c : chain) {
    payload.value = apply(payload.value, c, c_ref);
    if (c.kind == DefenseKind::kClip && std::isfinite(c.bound)) c_ref = c.bound;
    payload.defenses.push_back(describe(c));
  }
  return payload;
}

std::string to_string(DefenseKind k) {
  switch (k) {
    case DefenseKind::kQsgd:
      return "qsgd";
    case DefenseKind::kSignSgd:
      return "signsgd";
    case DefenseKind::kTopK:
      return "topk";
    case DefenseKind::kClip:
      return "clip";
    case DefenseKind::kGauss:
      return "gauss";
  }
  return "?";
}

DefenseKind defense_kind_from_string(const std::string& s) {
  for (auto k : {DefenseKind::kQsgd, DefenseKind::kSignSgd, DefenseKind::kTopK, DefenseKind::kClip,
                 DefenseKind::kGauss})
    if (to_string(k) == s) return k;
  fail(ErrorCode::kConfig, "defense", "unknown defense '" + s + "'");
}

std::string describe(const DefenseConfig& c) {
  std::ostringstream os;
  os << to_string(c.kind);
  switch (c.kind) {
    case DefenseKind::kQsgd:
      os << "(bits=" << c.bits << ")";
      break;
    case DefenseKind::kTopK:
      os << "(k=" << c.fraction << ")";
      break;
    case DefenseKind::kClip:
      os << "(c=" << c.bound << ")";
      break;
    case DefenseKind::kGauss:
      os << "(sigma_m=" << c.multiplier << ")";
      break;
    case DefenseKind::kSignSgd:
      break;
  }
  return os.str();
}

}  // namespace gleak
