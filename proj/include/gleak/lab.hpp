// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gleak/attack.hpp"
#include "gleak/dataset.hpp"
#include "gleak/defense.hpp"
#include "gleak/fed.hpp"
#include "gleak/generator.hpp"
#include "gleak/io.hpp"
#include "gleak/igsa.hpp"
#include "gleak/jacobian_probe.hpp"
#include "gleak/metrics.hpp"
#include "gleak/model.hpp"
#include "gleak/synthetic.hpp"

namespace gleak {

enum class Scenario {
  kUpdateSweep,
  kMinibatchSweep,
  kDimensionSweep,
  kIgsaTrace,
  kSkipAblation,
  kNinAblation,
  kMicroMods,
  kDefenseTradeoff,
  kAnalyticDemo,
  kTheorem2Probe,
};

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct DataSource {
  std::string kind = "synthetic";  // synthetic | cifar
  SyntheticFamily family{FamilyKind::kProceduralShapes, 16, 3, 4, 0};
  std::string path;  // cifar: binary file, sample shape from `family`
};

/// Preset name plus its knobs; the scenario resolves it against the data shape.
struct ModelChoice {
  std::string preset = "convnet";  // mlp | convnet | resnet | densenet | nin
  ConvnetOptions convnet{8, 2, Activation::kRelu, false, 0.0, false};
  std::vector<std::size_t> hidden{16};  // mlp
  Activation activation = Activation::kLeakyRelu;  // mlp
  bool bias = true;                                // mlp
  std::size_t blocks = 2, channels = 8;            // resnet
  std::size_t layers_per_block = 3, growth = 4, dense_blocks = 1;
  std::vector<std::vector<std::size_t>> nin_kernels{{1, 3, 5}, {1, 3, 5}};
  std::size_t branch_channels = 4;
};

/// The victim's local run attacked in the sweep scenarios.
struct VictimConfig {
  std::size_t samples = 4;     // N
  std::size_t batch_size = 4;  // B
  std::size_t epochs = 1;      // E
  double learning_rate = 0.1;
};

struct SweepConfig {
  std::vector<std::size_t> updates{1, 2, 4, 6, 8};
  std::vector<std::string> attack_kinds{"gia_o"};
  std::vector<std::size_t> minibatches{1, 2, 4, 8};
  std::vector<std::string> adversary_cases{"wst", "bst"};
  std::vector<std::size_t> batch_sizes{1, 4, 16, 32};
  std::vector<std::size_t> resolutions{8, 16, 32};
  bool resolution_global_pool = true;  // keep p fixed across resolutions
  std::vector<std::string> skip_families{"resnet", "densenet"};
  std::vector<std::string> micro_mods{"remove_relu", "remove_maxpool", "remove_bias", "set_kernel(1)"};
  std::vector<std::vector<DefenseConfig>> defense_grid;  // [] = undefended
  std::size_t probe_samples = 4;                         // igsa_trace
  std::vector<std::vector<std::size_t>> theorem2_hidden{{2}, {8}};
  std::size_t theorem2_input_dim = 8, theorem2_batch = 4;
  std::size_t analytic_input_dim = 8;
  double analytic_learning_rate = 1e-3;
};

struct ExperimentConfig {
  Scenario scenario = Scenario::kUpdateSweep;
  std::uint64_t seed = 0;
  std::size_t seeds = 5;
  std::string output_dir = "runs/out";
  DataSource data;
  ModelChoice model;
  VictimConfig victim;
  FLConfig fl;
  AttackConfig attack;
  std::vector<DefenseConfig> defenses;  // applied to the victim payload
  MetricConfig metrics;
  IgsaConfig igsa;
  JacobianProbeConfig theorem2;
  GeneratorSpec generator;  // used when attack_kinds has gia_l
  SweepConfig sweep;
};

/// Desk defaults for a scenario; every field is set.
ExperimentConfig default_config(Scenario scenario);

/// Parses a JSON config on top of default_config(scenario). Unknown keys,
/// wrong types and missing "scenario" are kConfig errors naming the key.
ExperimentConfig parse_config(const std::string& json_text);
nlohmann::json to_json(const ExperimentConfig& config);
void validate(const ExperimentConfig& config);

/// FNV-1a of the canonical JSON without output_dir; equal configs share it.
std::uint64_t config_hash(const ExperimentConfig& config);
std::string hex(std::uint64_t v);

/// Model for the data's sample shape, or an explicit resolution override.
ModelSpec resolve_model(const ModelChoice& choice, const Shape& sample_shape, std::size_t classes);

/// One attack on one victim batch.
struct TrialResult {
  MetricsReport metrics;
  Tensor truth, reconstruction;
  std::size_t u_actual = 0;
  double seconds = 0.0;
};

struct Trial {
  ModelSpec spec;
  SyntheticFamily family;
  VictimConfig victim;
  AttackConfig attack;
  std::vector<DefenseConfig> defenses;
  std::uint64_t seed = 0;
  const Generator* generator = nullptr;  // gia_l only
  const ClientDataset* pool = nullptr;   // draw the batch from here instead of `family`
};

/// Draws the victim batch and model from `seed`, runs the victim's local
/// training, applies the defense chain and attacks the payload.
TrialResult run_trial(const Trial& trial, const MetricConfig& metrics = {});

struct RunOptions {
  std::size_t jobs = 0;  // 0: GLEAK_JOBS, else 1
  bool plots = true;
  std::function<void(const std::string&)> log;
};

struct ScenarioResult {
  std::filesystem::path dir;
  std::uint64_t config_hash = 0;
  CsvTable summary;
  std::size_t jobs_run = 0, jobs_skipped = 0;
};

/// Writes config.json (materialized), jobs/<key>.json per job, results.jsonl,
/// summary.csv and plots under `config.output_dir`. Jobs whose file carries
/// the same config hash are reused.
ScenarioResult run_scenario(const ExperimentConfig& config, const RunOptions& options = {});

/// Re-renders every PNG of an artifact directory from its CSV and tensors.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir);

/// Column names of a scenario's summary.csv.
std::vector<std::string> scenario_columns(Scenario s);

/// Worker count from GLEAK_JOBS, 1 when unset or invalid.
std::size_t jobs_from_env();

}  // namespace gleak
