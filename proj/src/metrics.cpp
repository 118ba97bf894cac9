// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gleak/dataset.hpp"
#include "gleak/error.hpp"

namespace gleak {

void validate(const MetricConfig& c) {
  if (!(c.psnr_threshold > 0.0) || !(c.data_range > 0.0) || c.restarts_for_wsrr == 0)
    fail(ErrorCode::kConfig, "MetricConfig", "need tau_1 > 0, data_range > 0, restarts >= 1");
}

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail(ErrorCode::kShapeMismatch, "mse", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.size() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b, double data_range) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / m));
}

std::vector<std::size_t> hungarian(std::span<const double> cost, std::size_t n) {
  if (cost.size() != n * n) fail(ErrorCode::kShapeMismatch, "hungarian", "cost is not n x n");
  // Potentials method over 1-based arrays; column 0 is a sentinel.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

std::vector<std::size_t> match_batch(const Tensor& truth, const Tensor& rec) {
  if (truth.shape() != rec.shape() || truth.ndim() < 1)
    fail(ErrorCode::kShapeMismatch, "match_batch",
         shape_str(truth.shape()) + " vs " + shape_str(rec.shape()));
  const std::size_t n = truth.dim(0);
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = mse(batch_row(truth, i), batch_row(rec, j));
  return hungarian(cost, n);
}

Tensor apply_matching(const Tensor& rec, std::span<const std::size_t> perm) {
  if (rec.ndim() < 1 || perm.size() != rec.dim(0))
    fail(ErrorCode::kShapeMismatch, "apply_matching", "permutation length differs from batch");
  std::vector<double> data;
  data.reserve(rec.size());
  for (auto j : perm) {
    const Tensor r = batch_row(rec, j);
    data.insert(data.end(), r.data().begin(), r.data().end());
  }
  return Tensor(rec.shape(), std::move(data));
}

bool leakage_indicator(const Tensor& x, const Tensor& x_rec, const MetricConfig& c) {
  return psnr(x, x_rec, c.data_range) > c.psnr_threshold;
}

MetricsReport evaluate_reconstruction(const Tensor& truth, const Tensor& rec,
                                      const MetricConfig& c) {
  validate(c);
  MetricsReport r;
  r.assignment = match_batch(truth, rec);
  const std::size_t n = truth.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor a = batch_row(truth, i);
    const Tensor b = batch_row(rec, r.assignment[i]);
    SampleMetrics s{mse(a, b), psnr(a, b, c.data_range), leakage_indicator(a, b, c)};
    r.mean_mse += s.mse;
    r.mean_psnr += s.psnr;
    r.brr += s.leaked ? 1.0 : 0.0;
    r.samples.push_back(s);
  }
  if (n > 0) {
    r.mean_mse /= static_cast<double>(n);
    r.mean_psnr /= static_cast<double>(n);
    r.brr /= static_cast<double>(n);
  }
  return r;
}

double brr(const Tensor& truth, const Tensor& rec, const MetricConfig& c) {
  return evaluate_reconstruction(truth, rec, c).brr;
}

double wsrr(const Tensor& truth, const std::function<Tensor(std::uint64_t)>& attack,
            std::size_t restarts, const MetricConfig& c) {
  if (restarts == 0) fail(ErrorCode::kInvalidArgument, "wsrr", "need at least one restart");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < restarts; ++r) {
    const MetricsReport rep = evaluate_reconstruction(truth, attack(r), c);
    if (rep.brr > 0.0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(restarts);
}

std::string to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["indicator"] = r.indicator;
  j["mean_mse"] = r.mean_mse;
  j["mean_psnr"] = r.mean_psnr;
  j["brr"] = r.brr;
  j["wsrr"] = r.wsrr ? nlohmann::json(*r.wsrr) : nlohmann::json(nullptr);
  j["assignment"] = r.assignment;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : r.samples)
    j["samples"].push_back({{"mse", s.mse}, {"psnr", s.psnr}, {"leaked", s.leaked}});
  return j.dump();
}

std::string csv_header() { return "mean_mse,mean_psnr,brr,wsrr,indicator"; }

std::string csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.mean_mse << ',' << r.mean_psnr << ',' << r.brr << ',';
  if (r.wsrr) os << *r.wsrr;
  os << ',' << r.indicator;
  return os.str();
}

namespace {
std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    fail(ErrorCode::kInvalidArgument, "spearman", "need two equal-length series of >= 2");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace gleak
