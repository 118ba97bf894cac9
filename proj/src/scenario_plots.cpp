// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>

#include "gleak/error.hpp"
#include "gleak/lab.hpp"
#include "gleak/plot.hpp"

namespace gleak {

namespace fs = std::filesystem;

namespace {

struct Curve {
  std::string x, y;                   // numeric columns
  std::string series;                 // grouping column, "" = one series
  std::string filter_col, filter_val; // keep matching rows only
  std::string file;
  std::optional<double> threshold;
  bool categorical_x = false;  // x is a label column; plotted at its first-seen index
};

std::vector<Curve> curves_for(Scenario s) {
  switch (s) {
    case Scenario::kUpdateSweep:
      return {{"updates", "psnr", "attack_kind", "", "", "psnr_vs_updates.png", 18.0}};
    case Scenario::kMinibatchSweep:
      return {{"minibatches", "psnr", "adversary_case", "", "", "psnr_vs_minibatches.png", 18.0}};
    case Scenario::kDimensionSweep:
      return {{"value", "psnr", "", "axis", "batch", "psnr_vs_batch.png", 18.0},
              {"value", "psnr", "", "axis", "resolution", "psnr_vs_resolution.png", 18.0}};
    case Scenario::kIgsaTrace:
      return {{"round", "igsa_normalized", "seed", "", "", "igsa_vs_round.png", std::nullopt},
              {"round", "psnr", "seed", "", "", "psnr_vs_round.png", 18.0},
              {"round", "test_accuracy", "seed", "", "", "accuracy_vs_round.png", std::nullopt}};
    case Scenario::kSkipAblation:
      return {{"variant", "psnr", "family", "", "", "psnr_by_variant.png", 18.0, true}};
    case Scenario::kNinAblation:
      return {{"variant", "psnr", "", "", "", "psnr_by_variant.png", 18.0, true}};
    case Scenario::kMicroMods:
      return {{"variant", "psnr", "", "", "", "psnr_by_variant.png", 18.0, true}};
    case Scenario::kDefenseTradeoff:
      return {{"test_accuracy", "psnr", "defense", "", "", "tradeoff.png", 18.0}};
    case Scenario::kAnalyticDemo:
      return {{"updates", "predicted_drift", "", "", "", "predicted_drift.png", std::nullopt},
              {"updates", "actual_drift", "", "", "", "actual_drift.png", std::nullopt}};
    case Scenario::kTheorem2Probe:
      return {{"parameters", "relative_change", "net", "", "", "relative_change.png", std::nullopt}};
  }
  return {};
}

// Seed-averaged points: one per (series, x) in first-seen order.
PlotSpec build(const CsvTable& t, const Curve& c) {
  PlotSpec p;
  p.title = t.scenario + ": " + c.y + " vs " + c.x;
  p.x_label = c.x;
  p.y_label = c.y;
  p.threshold = c.threshold;
  const std::size_t xi = t.column(c.x), yi = t.column(c.y);
  const std::size_t si = c.series.empty() ? 0 : t.column(c.series);
  const std::size_t fi = c.filter_col.empty() ? 0 : t.column(c.filter_col);
  const auto ys = t.numeric(c.y);
  std::vector<double> xs;
  if (!c.categorical_x) xs = t.numeric(c.x);
  (void)yi;

  std::vector<std::string> series_order, x_labels;
  std::map<std::string, std::vector<std::pair<double, std::pair<double, int>>>> acc;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (!c.filter_col.empty() && t.rows[r][fi] != c.filter_val) continue;
    const std::string s = c.series.empty() ? c.y : t.rows[r][si];
    if (!acc.count(s)) series_order.push_back(s);
    double x;
    if (c.categorical_x) {
      const auto it = std::find(x_labels.begin(), x_labels.end(), t.rows[r][xi]);
      x = static_cast<double>(it - x_labels.begin());
      if (it == x_labels.end()) x_labels.push_back(t.rows[r][xi]);
    } else {
      x = xs[r];
    }
    auto& pts = acc[s];
    const auto pt = std::find_if(pts.begin(), pts.end(), [x](const auto& e) { return e.first == x; });
    if (!std::isfinite(ys[r])) continue;
    if (pt == pts.end()) pts.push_back({x, {ys[r], 1}});
    else {
      pt->second.first += ys[r];
      ++pt->second.second;
    }
  }
  for (const auto& s : series_order) {
    Series out;
    out.name = s;
    auto pts = acc[s];
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [x, sum] : pts) {
      out.x.push_back(x);
      out.y.push_back(sum.first / sum.second);
    }
    p.series.push_back(std::move(out));
  }
  return p;
}

}  // namespace

std::vector<fs::path> emit_plots(const fs::path& dir) {
  const CsvTable t = read_csv(dir / "summary.csv");
  const Scenario scenario = scenario_from_string(t.scenario);
  // Fail on a missing column before writing anything.
  for (const auto& c : curves_for(scenario)) {
    t.column(c.x);
    t.column(c.y);
    if (!c.series.empty()) t.column(c.series);
    if (!c.filter_col.empty()) t.column(c.filter_col);
  }
  std::vector<fs::path> written;
  for (const auto& c : curves_for(scenario)) {
    const PlotSpec spec = build(t, c);
    std::vector<std::pair<std::string, std::string>> text{{"Title", spec.title}, {"x", spec.x_label}, {"y", spec.y_label}};
    for (std::size_t k = 0; k < spec.series.size(); ++k) text.emplace_back("series" + std::to_string(k), spec.series[k].name);
    if (spec.threshold) text.emplace_back("threshold", format_number(*spec.threshold));
    const fs::path out = dir / "plots" / c.file;
    write_png(out, render_plot(spec), text);
    written.push_back(out);
  }
  if (fs::exists(dir / "jobs")) {
    std::vector<fs::path> dumps;
    for (const auto& e : fs::directory_iterator(dir / "jobs"))
      if (e.path().filename().string().ends_with(".recon.glkt")) dumps.push_back(e.path());
    std::sort(dumps.begin(), dumps.end());
    for (const auto& d : dumps) {
      const Tensor both = read_tensor(d);
      std::string name = d.filename().string();
      name = name.substr(0, name.size() - std::string(".recon.glkt").size());
      const fs::path out = dir / "plots" / "grids" / (name + ".png");
      // Top row truth, bottom row reconstruction.
      write_png(out, render_grid(both, std::max<std::size_t>(1, both.dim(0) / 2), 2), {{"Title", name}});
      written.push_back(out);
    }
  }
  return written;
}

}  // namespace gleak
