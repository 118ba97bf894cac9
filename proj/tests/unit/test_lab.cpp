// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <set>

#include "doctest.h"
#include "gleak/error.hpp"
#include "gleak/io.hpp"
#include "gleak/lab.hpp"
#include <json.hpp>

using namespace gleak;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "gleak_unit_lab" / name;
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_sweep(const fs::path& out) {
  json j{{"scenario", "update_sweep"},
         {"seeds", 2},
         {"output_dir", out.string()},
         {"data", {{"resolution", 8}}},
         {"attack", {{"iterations", 5}}},
         {"sweep", {{"updates", {1, 2}}}}};
  return parse_config(j.dump());
}

std::string error_key(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    return e.context();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults are materialized") {
    const ExperimentConfig c = parse_config(R"({"scenario": "minibatch_sweep"})");
    CHECK(c.victim.samples == 8);
    CHECK(to_json(c) == to_json(default_config(Scenario::kMinibatchSweep)));
    CHECK(parse_config(to_json(c).dump()).attack.iterations == c.attack.iterations);
  }
  SUBCASE("errors name the key") {
    CHECK(error_key(R"({"seeds": 2})") == "scenario");
    CHECK(error_key(R"({"scenario": "update_sweep", "attack": {"iters": 3}})") == "attack.iters");
    CHECK(error_key(R"({"scenario": "update_sweep", "seeds": "two"})") == "seeds");
    CHECK(error_key(R"({"scenario": "nope"})") == "scenario");
    CHECK(error_key(R"({"scenario": "update_sweep", "sweep": {"updates": []}})") == "sweep.updates");
  }
  SUBCASE("hash ignores the output directory") {
    ExperimentConfig a = default_config(Scenario::kSkipAblation), b = a;
    b.output_dir = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    b.seed = 1;
    CHECK(config_hash(a) != config_hash(b));
  }
  SUBCASE("every scenario round-trips") {
    for (const char* s : {"update_sweep", "minibatch_sweep", "dimension_sweep", "igsa_trace", "skip_ablation",
                          "nin_ablation", "micro_mods", "defense_tradeoff", "analytic_demo", "theorem2_probe"}) {
      const ExperimentConfig c = default_config(scenario_from_string(s));
      CHECK(to_string(c.scenario) == s);
      CHECK_NOTHROW(validate(c));
      CHECK(to_json(parse_config(to_json(c).dump())) == to_json(c));
    }
  }
}

TEST_CASE("scenario runs resume and are deterministic") {
  const fs::path a = fresh("sweep_a"), b = fresh("sweep_b");
  RunOptions o;
  o.jobs = 1;
  const ScenarioResult first = run_scenario(tiny_sweep(a), o);
  CHECK(first.jobs_run == 4);
  CHECK(first.summary.rows.size() == 4);
  std::set<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& r : first.summary.rows)
    keys.insert({r[first.summary.column("updates")], r[first.summary.column("seed")], r[first.summary.column("attack_kind")]});
  CHECK(keys.size() == 4);
  CHECK(fs::exists(a / "plots" / "psnr_vs_updates.png"));
  CHECK(fs::exists(a / "config.json"));

  const ScenarioResult again = run_scenario(tiny_sweep(a), o);
  CHECK(again.jobs_run == 0);
  CHECK(again.jobs_skipped == 4);

  o.jobs = 2;
  run_scenario(tiny_sweep(b), o);
  CHECK(read_file(a / "summary.csv") == read_file(b / "summary.csv"));

  SUBCASE("a changed config reruns its jobs") {
    ExperimentConfig c = tiny_sweep(a);
    c.attack.iterations = 6;
    CHECK(run_scenario(c, {1, false, {}}).jobs_run == 4);
  }
}

TEST_CASE("a failing job leaves error.json") {
  const fs::path d = fresh("fail");
  fs::create_directories(d);
  ClientDataset two;
  two.x = Tensor({2, 3, 8, 8});
  two.y = {0, 1};
  write_cifar_binary(d / "two.bin", two);
  ExperimentConfig c = tiny_sweep(d / "out");
  c.data.kind = "cifar";
  c.data.path = (d / "two.bin").string();
  CHECK_THROWS_AS(run_scenario(c, {1, false, {}}), Error);
  const json report = json::parse(read_file(d / "out" / "error.json"));
  CHECK(report["scenario"] == "update_sweep");
  CHECK(report["code"] == "config");
  CHECK(report["job"].get<std::string>().starts_with("U1_"));
}

TEST_CASE("small closed-form scenarios") {
  SUBCASE("theorem2_probe") {
    ExperimentConfig c = default_config(Scenario::kTheorem2Probe);
    c.output_dir = fresh("t2").string();
    c.seeds = 1;
    const ScenarioResult r = run_scenario(c, {1, false, {}});
    REQUIRE(r.summary.rows.size() == 2);
    const auto p = r.summary.numeric("parameters"), rank = r.summary.numeric("numerical_rank");
    const auto n = r.summary.numeric("input_dim");
    CHECK(p[0] < p[1]);
    CHECK(n[0] == 32);
    for (std::size_t i = 0; i < 2; ++i) CHECK(rank[i] <= std::min(p[i], n[i]));
  }
  SUBCASE("analytic_demo") {
    ExperimentConfig c = default_config(Scenario::kAnalyticDemo);
    c.output_dir = fresh("analytic").string();
    c.seeds = 2;
    const ScenarioResult r = run_scenario(c, {1, false, {}});
    const auto u = r.summary.numeric("updates"), err = r.summary.numeric("inversion_error");
    for (std::size_t i = 0; i < u.size(); ++i)
      if (u[i] == 1) CHECK(err[i] < 1e-6);
  }
}
