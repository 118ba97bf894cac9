// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

// gleak: run a lab scenario, re-render its plots, write synthetic data
// files, or self-check the build.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "gleak/error.hpp"
#include "gleak/io.hpp"
#include "gleak/lab.hpp"
#include "gleak/synthetic.hpp"
#include "gleak/verify.hpp"

namespace fs = std::filesystem;
using namespace gleak;

namespace {

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out,
            std::size_t jobs, bool plots) {
  ExperimentConfig c = parse_config(read_file(path));
  if (seed) c.seed = *seed;
  if (!out.empty()) c.output_dir = out;
  RunOptions o;
  o.jobs = jobs;
  o.plots = plots;
  o.log = log_line;
  const auto t0 = std::chrono::steady_clock::now();
  const ScenarioResult r = run_scenario(c, o);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s: %zu jobs run, %zu reused, %.1f s, config %s -> %s\n", to_string(c.scenario).c_str(),
              r.jobs_run, r.jobs_skipped, s, hex(r.config_hash).c_str(), (r.dir / "summary.csv").c_str());
  return 0;
}

int cmd_make_data(const std::string& family, std::size_t n, const std::string& out, std::size_t resolution,
                  std::size_t channels, std::size_t classes, std::uint64_t seed) {
  const SyntheticFamily f{family_kind_from_string(family), resolution, channels, classes, seed};
  write_cifar_binary(out, generate_dataset(f, n));
  std::printf("wrote %zu samples of %zux%zux%zu to %s\n", n, channels, resolution, resolution, out.c_str());
  return 0;
}

int cmd_verify(std::uint64_t seed, const std::string& scratch) {
  bool ok = true;
  for (const auto& c : run_self_checks(seed, scratch)) {
    std::printf("%s  %-42s %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient leakage lab"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 0;
  app.add_option("--seed", seed, "override the root seed");
  app.add_option("--out", out, "override the output directory");
  app.add_option("--jobs", jobs, "worker threads (default GLEAK_JOBS, else 1)");

  auto* run = app.add_subcommand("run", "run a scenario from a JSON config");
  std::string config_path;
  bool no_plots = false;
  run->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);
  run->add_flag("--no-plots", no_plots, "skip PNG output");

  auto* defaults = app.add_subcommand("defaults", "print the materialized default config of a scenario");
  std::string scenario;
  defaults->add_option("scenario", scenario)->required();

  auto* plot = app.add_subcommand("plot", "re-render the plots of an artifact directory");
  std::string plot_dir;
  plot->add_option("dir", plot_dir)->required()->check(CLI::ExistingDirectory);

  auto* make = app.add_subcommand("make-data", "write a synthetic family as a CIFAR-style binary");
  std::string family;
  std::size_t n = 0, resolution = 32, channels = 3, classes = 10;
  make->add_option("family", family, "gaussian_blobs | procedural_shapes | textures_a | textures_b")->required();
  make->add_option("n", n)->required()->check(CLI::PositiveNumber);
  std::string data_out;
  make->add_option("out", data_out)->required();
  make->add_option("--resolution", resolution);
  make->add_option("--channels", channels);
  make->add_option("--classes", classes);

  auto* verify = app.add_subcommand("verify", "oracle self-checks of this build");
  std::string scratch = (fs::temp_directory_path() / "gleak_verify").string();
  verify->add_option("--scratch", scratch, "directory for round-trip files");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, seed, out, jobs, !no_plots);
    if (*defaults) {
      ExperimentConfig c = default_config(scenario_from_string(scenario));
      if (seed) c.seed = *seed;
      if (!out.empty()) c.output_dir = out;
      std::cout << to_json(c).dump(2) << "\n";
      return 0;
    }
    if (*plot) {
      for (const auto& p : emit_plots(plot_dir)) std::printf("%s\n", p.c_str());
      return 0;
    }
    if (*make) return cmd_make_data(family, n, data_out, resolution, channels, classes, seed.value_or(0));
    if (*verify) return cmd_verify(seed.value_or(0), scratch);
  } catch (const Error& e) {
    std::fprintf(stderr, "gleak: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gleak: %s\n", e.what());
    return 1;
  }
  return 0;
}
