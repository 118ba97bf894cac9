// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <map>

#include "doctest.h"
#include "gleak/error.hpp"
#include "gleak/io.hpp"
#include "gleak/lab.hpp"
#include "gleak/plot.hpp"

using namespace gleak;
namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "gleak_unit_plot" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Row holding the most pixels of `color`, -1 if none.
long dominant_row(const Image& img, std::uint32_t color) {
  long best = -1;
  std::size_t most = 0;
  for (std::size_t y = 0; y < img.height; ++y) {
    std::size_t n = 0;
    for (std::size_t x = 0; x < img.width; ++x) n += img.at(x, y) == color;
    if (n > most) {
      most = n;
      best = static_cast<long>(y);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("threshold line sits at its value") {
  // Two flat series at 10 and 26: 18 is halfway between their rows.
  PlotSpec p;
  p.series = {{"lo", {0, 1}, {10, 10}}, {"hi", {0, 1}, {26, 26}}};
  p.threshold = 18.0;
  const Image img = render_plot(p);
  const long lo = dominant_row(img, 0x1f77b4), hi = dominant_row(img, 0xff7f0e), th = dominant_row(img, 0xd03030);
  REQUIRE(th >= 0);
  CHECK(std::abs(th - (lo + hi) / 2) <= 1);
  CHECK(lo > hi);  // image rows grow downward
}

TEST_CASE("empty input draws empty axes") {
  PlotSpec p;
  p.series = {{"none", {}, {}}, {"nan", {NAN}, {NAN}}};
  const Image img = render_plot(p);
  CHECK(img.width == 480);
  CHECK(dominant_row(img, 0x202020) >= 0);
  CHECK(dominant_row(img, 0x1f77b4) == -1);
  p.series = {{"bad", {1, 2}, {1}}};
  CHECK_THROWS_AS(render_plot(p), Error);
}

TEST_CASE("png output is byte-stable and round-trips") {
  const fs::path d = fresh("png");
  PlotSpec p;
  p.series = {{"a", {1, 2, 4, 8}, {30, 12, 7, 5}}};
  p.threshold = 18.0;
  const Image img = render_plot(p);
  write_png(d / "a.png", img, {{"Title", "x"}});
  write_png(d / "b.png", render_plot(p), {{"Title", "x"}});
  CHECK(read_file(d / "a.png") == read_file(d / "b.png"));
  const Image back = read_png(d / "a.png");
  CHECK(back.width == img.width);
  CHECK(back.rgb == img.rgb);
}

TEST_CASE("grid layout") {
  Tensor b({3, 1, 2, 2});
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = i < 4 ? 1.0 : 0.0;
  const Image g = render_grid(b, 2, 1);
  CHECK(g.at(0, 0) == 0xffffff);
  CHECK_THROWS_AS(render_grid(Tensor({2, 2, 2, 2}), 1), Error);
}

TEST_CASE("emit_plots from a summary file") {
  const fs::path d = fresh("emit");
  SUBCASE("empty table gives empty axes") {
    write_csv(d / "summary.csv", {"defense_tradeoff", scenario_columns(Scenario::kDefenseTradeoff), {}});
    const auto files = emit_plots(d);
    REQUIRE(files.size() == 1);
    CHECK(files[0].filename() == "tradeoff.png");
    const Image img = read_png(files[0]);
    CHECK(dominant_row(img, 0x202020) >= 0);
  }
  SUBCASE("missing column fails before writing") {
    write_csv(d / "summary.csv", {"update_sweep", {"updates", "seed"}, {{"1", "0"}}});
    CHECK_THROWS_AS(emit_plots(d), Error);
    CHECK_FALSE(fs::exists(d / "plots"));
  }
  SUBCASE("tradeoff has the threshold line") {
    write_csv(d / "summary.csv",
              {"defense_tradeoff", scenario_columns(Scenario::kDefenseTradeoff),
               {{"none", "0", "30", "0.001", "1", "0.7"}, {"clip(c=1)", "0", "10", "0.1", "0", "0.6"}}});
    const Image img = read_png(emit_plots(d).at(0));
    CHECK(dominant_row(img, 0xd03030) >= 0);
  }
}
