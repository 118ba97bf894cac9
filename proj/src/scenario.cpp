// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <random>
#include <thread>

#include "gleak/error.hpp"
#include "gleak/lab.hpp"
#include "gleak/rng.hpp"

namespace gleak {

using nlohmann::json;
namespace fs = std::filesystem;

std::size_t jobs_from_env() {
  const char* v = std::getenv("GLEAK_JOBS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end != v && *end == '\0' && n > 0) ? static_cast<std::size_t>(n) : 1;
}

std::vector<std::string> scenario_columns(Scenario s) {
  const std::vector<std::string> attack{"psnr", "mse", "brr"};
  auto with = [&](std::vector<std::string> head) {
    head.insert(head.end(), attack.begin(), attack.end());
    return head;
  };
  switch (s) {
    case Scenario::kUpdateSweep:
      return with({"updates", "seed", "attack_kind", "u_actual"});
    case Scenario::kMinibatchSweep:
      return with({"minibatches", "batch_size", "seed", "adversary_case", "u_actual"});
    case Scenario::kDimensionSweep:
      return with({"axis", "value", "seed", "parameters"});
    case Scenario::kIgsaTrace:
      return {"seed", "round", "igsa_raw", "igsa_normalized", "saturated", "psnr", "test_accuracy"};
    case Scenario::kSkipAblation:
      return with({"family", "variant", "seed", "parameters"});
    case Scenario::kNinAblation:
      return with({"variant", "layers", "seed"});
    case Scenario::kMicroMods:
      return with({"variant", "seed", "parameters"});
    case Scenario::kDefenseTradeoff:
      return {"defense", "seed", "psnr", "mse", "brr", "test_accuracy"};
    case Scenario::kAnalyticDemo:
      return {"seed", "updates", "inversion_error", "t_star", "predicted_drift", "actual_drift", "x_error"};
    case Scenario::kTheorem2Probe:
      return {"net", "seed", "parameters", "input_dim", "numerical_rank", "sigma_min", "relative_change"};
  }
  return {};
}

namespace {

std::uint64_t seed_for(const ExperimentConfig& c, std::size_t i) { return derive_seed({c.seed, i}); }

std::string chain_name(const std::vector<DefenseConfig>& chain) {
  if (chain.empty()) return "none";
  std::string s;
  for (const auto& d : chain) s += (s.empty() ? "" : "+") + describe(d);
  return s;
}

std::vector<DefenseConfig> seeded(std::vector<DefenseConfig> chain, std::initializer_list<std::uint64_t> parts) {
  for (std::size_t i = 0; i < chain.size(); ++i)
    if (chain[i].seed == 0) {
      std::vector<std::uint64_t> p(parts);
      p.push_back(i);
      std::uint64_t s = tag(Stream::kDefense);
      for (auto v : p) s = derive_seed({s, v});
      chain[i].seed = s;
    }
  return chain;
}

ClientDataset draw_batch(const SyntheticFamily& family, const ClientDataset* pool, std::size_t n, std::uint64_t seed) {
  if (!pool) {
    SyntheticFamily f = family;
    f.seed = derive_seed({seed, tag(Stream::kData)});
    return generate_dataset(f, n);
  }
  if (pool->size() < n) fail(ErrorCode::kConfig, "data", "dataset has fewer samples than the victim batch");
  std::vector<std::size_t> idx(pool->size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto rng = make_rng({seed, tag(Stream::kData)});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  return pool->subset(idx);
}

json attack_fields(const TrialResult& r) {
  return {{"psnr", r.metrics.mean_psnr}, {"mse", r.metrics.mean_mse}, {"brr", r.metrics.brr}, {"seconds", r.seconds}};
}

struct Job {
  std::string key;
  std::function<json(const fs::path& dir)> run;  // returns an array of row objects
};

struct Context {
  const ExperimentConfig& c;
  Shape sample_shape;
  std::optional<ClientDataset> pool;  // cifar
  std::shared_ptr<const Generator> generator;

  const ClientDataset* pool_ptr() const { return pool ? &*pool : nullptr; }
};

TrialResult trial(const Context& ctx, ModelSpec spec, SyntheticFamily family, VictimConfig victim, AttackConfig attack,
                  std::uint64_t seed, const std::vector<DefenseConfig>& defenses, const fs::path& dump = {}) {
  const Trial t{std::move(spec), family, victim, attack, seeded(defenses, {seed}), seed, ctx.generator.get(), ctx.pool_ptr()};
  const TrialResult r = run_trial(t, ctx.c.metrics);
  if (!dump.empty() && r.truth.ndim() == 4) {
    Shape s = r.truth.shape();
    s[0] *= 2;
    std::vector<double> both(r.truth.data().begin(), r.truth.data().end());
    const Tensor matched = apply_matching(r.reconstruction, r.metrics.assignment);
    both.insert(both.end(), matched.data().begin(), matched.data().end());
    write_tensor(dump, Tensor(s, std::move(both)));
  }
  return r;
}

fs::path dump_path(const fs::path& dir, const std::string& key, std::size_t seed_index) {
  return seed_index == 0 ? dir / "jobs" / (key + ".recon.glkt") : fs::path{};
}

std::vector<Job> build_jobs(const Context& ctx) {
  const ExperimentConfig& c = ctx.c;
  const auto& w = c.sweep;
  const std::size_t classes = c.data.family.classes;
  std::vector<Job> jobs;
  auto per_seed = [&](const std::string& stem, auto fn) {
    for (std::size_t i = 0; i < c.seeds; ++i) {
      const std::string key = stem + "_s" + std::to_string(i);
      jobs.push_back({key, [fn, i, key, &c](const fs::path& dir) { return fn(i, seed_for(c, i), dir, key); }});
    }
  };

  switch (c.scenario) {
    case Scenario::kUpdateSweep: {
      const ModelSpec spec = resolve_model(c.model, ctx.sample_shape, classes);
      for (auto u : w.updates)
        for (const auto& kind : w.attack_kinds)
          per_seed("U" + std::to_string(u) + "_" + kind, [&ctx, spec, u, kind](std::size_t i, std::uint64_t s, const fs::path& dir, const std::string& key) {
            VictimConfig v = ctx.c.victim;
            v.epochs = u;
            v.batch_size = v.samples;
            AttackConfig a = ctx.c.attack;
            a.kind = attack_kind_from_string(kind);
            const auto r = trial(ctx, spec, ctx.c.data.family, v, a, s, ctx.c.defenses, dump_path(dir, key, i));
            json row = attack_fields(r);
            row.update({{"updates", u}, {"seed", i}, {"attack_kind", kind}, {"u_actual", r.u_actual}});
            return json::array({row});
          });
      break;
    }
    case Scenario::kMinibatchSweep: {
      const ModelSpec spec = resolve_model(c.model, ctx.sample_shape, classes);
      for (auto m : w.minibatches)
        for (const auto& ac : w.adversary_cases)
          per_seed("M" + std::to_string(m) + "_" + ac, [&ctx, spec, m, ac](std::size_t i, std::uint64_t s, const fs::path& dir, const std::string& key) {
            VictimConfig v = ctx.c.victim;
            v.batch_size = v.samples / m;
            AttackConfig a = ctx.c.attack;
            a.adversary_case = adversary_case_from_string(ac);
            const auto r = trial(ctx, spec, ctx.c.data.family, v, a, s, ctx.c.defenses, dump_path(dir, key, i));
            json row = attack_fields(r);
            row.update({{"minibatches", m}, {"batch_size", v.batch_size}, {"seed", i}, {"adversary_case", ac}, {"u_actual", r.u_actual}});
            return json::array({row});
          });
      break;
    }
    case Scenario::kDimensionSweep: {
      if (ctx.pool && !w.resolutions.empty())
        fail(ErrorCode::kConfig, "sweep.resolutions", "the resolution axis needs synthetic data");
      const ModelSpec base = resolve_model(c.model, ctx.sample_shape, classes);
      for (auto b : w.batch_sizes)
        per_seed("B" + std::to_string(b), [&ctx, base, b](std::size_t i, std::uint64_t s, const fs::path& dir, const std::string& key) {
          VictimConfig v = ctx.c.victim;
          v.samples = v.batch_size = b;
          v.epochs = 1;
          const auto r = trial(ctx, base, ctx.c.data.family, v, ctx.c.attack, s, ctx.c.defenses, dump_path(dir, key, i));
          json row = attack_fields(r);
          row.update({{"axis", "batch"}, {"value", b}, {"seed", i}, {"parameters", parameter_count(base)}});
          return json::array({row});
        });
      for (auto res : w.resolutions) {
        SyntheticFamily f = c.data.family;
        f.resolution = res;
        ModelChoice m = c.model;
        if (w.resolution_global_pool) m.convnet.global_pool = true;
        const ModelSpec spec = resolve_model(m, {f.channels, res, res}, classes);
        per_seed("R" + std::to_string(res), [&ctx, spec, f, res](std::size_t i, std::uint64_t s, const fs::path& dir, const std::string& key) {
          VictimConfig v = ctx.c.victim;
          v.epochs = 1;
          v.batch_size = v.samples;
          const auto r = trial(ctx, spec, f, v, ctx.c.attack, s, ctx.c.defenses, dump_path(dir, key, i));
          json row = attack_fields(r);
          row.update({{"axis", "resolution"}, {"value", res}, {"seed", i}, {"parameters", parameter_count(spec)}});
          return json::array({row});
        });
      }
      break;
    }
    case Scenario::kIgsaTrace: {
      const ModelSpec spec = resolve_model(c.model, ctx.sample_shape, classes);
      per_seed("trace", [&ctx, spec](std::size_t i, std::uint64_t s, const fs::path&, const std::string&) {
        const ExperimentConfig& c = ctx.c;
        FederatedData fd;
        SyntheticFamily f = c.data.family;
        for (std::size_t m = 0; m < c.fl.num_clients; ++m) {
          f.seed = derive_seed({s, tag(Stream::kData), m});
          fd.clients.push_back(generate_dataset(f, c.fl.samples_per_client));
        }
        f.seed = derive_seed({s, tag(Stream::kData), 0x7e57u});
        fd.test = generate_dataset(f, 128);
        f.seed = derive_seed({s, tag(Stream::kData), 0x960be});
        const ClientDataset probe = generate_dataset(f, c.sweep.probe_samples);
        FLConfig fl = c.fl;
        fl.seed = derive_seed({s, tag(Stream::kSampling)});

        json rows = json::array();
        std::vector<double> raw;
        TrainingHooks hooks;
        hooks.on_round = [&](const RoundContext& rc) {
          IgsaConfig ic = c.igsa;
          ic.seed = derive_seed({s, tag(Stream::kIgsa), rc.round});
          const IgsaScore score = igsa(spec, rc.global_before, probe.x, probe.y, ic);
          const auto lt = local_train(spec, rc.global_before, probe, 1, probe.size(), fl.learning_rate,
                                      derive_seed({s, tag(Stream::kShuffle), rc.round}));
          AttackConfig a = c.attack;
          a.seed = derive_seed({s, tag(Stream::kAttackInit), rc.round});
          AttackTarget target{spec, rc.global_before, lt.payload, probe.x.shape(), probe.y};
          const Tensor rec = run_gia_o(a, target).reconstructed;
          raw.push_back(score.raw);
          rows.push_back({{"seed", i},
                          {"round", rc.round},
                          {"igsa_raw", score.raw},
                          {"saturated", score.saturated},
                          {"psnr", evaluate_reconstruction(probe.x, rec, c.metrics).mean_psnr}});
        };
        const auto records = run_training(fl, spec, fd, hooks);
        const auto norm = min_max_normalize(raw);
        for (std::size_t t = 0; t < rows.size(); ++t) {
          rows[t]["igsa_normalized"] = norm[t];
          rows[t]["test_accuracy"] = records[t].test_accuracy;
        }
        return rows;
      });
      break;
    }
    case Scenario::kSkipAblation: {
      std::vector<std::tuple<std::string, std::string, ModelSpec>> variants;
      for (const auto& fam : w.skip_families) {
        if (fam == "resnet") {
          const ModelSpec base = resnet_like_spec(ctx.sample_shape, classes, c.model.blocks, c.model.channels);
          variants.emplace_back(fam, "uncut", base);
          for (std::size_t k = 0; k < base.skip_connections.size(); ++k)
            variants.emplace_back(fam, "cut" + std::to_string(k), cut_skip(base, k));
        } else {
          const ModelSpec base = densenet_like_spec(ctx.sample_shape, classes, c.model.layers_per_block,
                                                    c.model.growth, c.model.dense_blocks);
          variants.emplace_back(fam, "baseline", base);
          variants.emplace_back(fam, "variant1", densenet_cut_variant(base, 1));
          variants.emplace_back(fam, "variant2", densenet_cut_variant(base, 2));
        }
      }
      for (const auto& [fam, name, spec] : variants)
        per_seed(fam + "_" + name, [&ctx, fam = fam, name = name, spec = spec](std::size_t i, std::uint64_t s, const fs::path& dir, const std::string& key) {
          const auto r = trial(ctx, spec, ctx.c.data.family, ctx.c.victim, ctx.c.attack, s, ctx.c.defenses, dump_path(dir, key, i));
          json row = attack_fields(r);
          row.update({{"family", fam}, {"variant", name}, {"seed", i}, {"parameters", parameter_count(spec)}});
          return json::array({row});
        });
      break;
    }
    case Scenario::kNinAblation: {
      ModelChoice m = c.model;
      m.preset = "nin";
      const ModelSpec spec = resolve_model(m, ctx.sample_shape, classes);
      std::vector<std::pair<std::string, std::vector<std::size_t>>> variants{{"full", c.attack.layer_subset}};
      for (std::size_t l = 0; l < spec.layers.size(); ++l)
        if (spec.layers[l].kind == LayerKind::kNin)
          variants.emplace_back("block" + std::to_string(spec.layers[l].nin_block), std::vector<std::size_t>{l});
      for (const auto& [name, subset] : variants)
        per_seed(name, [&ctx, spec, name = name, subset = subset](std::size_t i, std::uint64_t s, const fs::path& dir, const std::string& key) {
          AttackConfig a = ctx.c.attack;
          a.layer_subset = subset;
          std::string layers;
          for (auto l : subset) layers += (layers.empty() ? "" : " ") + std::to_string(l);
          const auto r = trial(ctx, spec, ctx.c.data.family, ctx.c.victim, a, s, ctx.c.defenses, dump_path(dir, key, i));
          json row = attack_fields(r);
          row.update({{"variant", name}, {"layers", layers.empty() ? "all" : layers}, {"seed", i}});
          return json::array({row});
        });
      break;
    }
    case Scenario::kMicroMods: {
      const ModelSpec base = resolve_model(c.model, ctx.sample_shape, classes);
      std::vector<std::pair<std::string, ModelSpec>> variants{{"baseline", base}};
      for (const auto& m : w.micro_mods) variants.emplace_back(m, apply_micro_mod(base, micro_mod_from_string(m)));
      for (const auto& [name, spec] : variants) {
        std::string stem = name;
        for (auto& ch : stem)
          if (ch == '(' || ch == ')') ch = '_';
        per_seed(stem, [&ctx, name = name, spec = spec](std::size_t i, std::uint64_t s, const fs::path& dir, const std::string& key) {
          const auto r = trial(ctx, spec, ctx.c.data.family, ctx.c.victim, ctx.c.attack, s, ctx.c.defenses, dump_path(dir, key, i));
          json row = attack_fields(r);
          row.update({{"variant", name}, {"seed", i}, {"parameters", parameter_count(spec)}});
          return json::array({row});
        });
      }
      break;
    }
    case Scenario::kDefenseTradeoff: {
      if (ctx.pool) fail(ErrorCode::kConfig, "data.kind", "defense_tradeoff generates its client data");
      const ModelSpec spec = resolve_model(c.model, ctx.sample_shape, classes);
      for (std::size_t g = 0; g < w.defense_grid.size(); ++g) {
        const auto chain = w.defense_grid[g];
        per_seed("D" + std::to_string(g), [&ctx, spec, chain](std::size_t i, std::uint64_t s, const fs::path& dir, const std::string& key) {
          const ExperimentConfig& c = ctx.c;
          auto victim_chain = c.defenses;
          victim_chain.insert(victim_chain.end(), chain.begin(), chain.end());
          const auto r = trial(ctx, spec, c.data.family, c.victim, c.attack, s, victim_chain, dump_path(dir, key, i));

          FederatedData fd;
          SyntheticFamily f = c.data.family;
          for (std::size_t m = 0; m < c.fl.num_clients; ++m) {
            f.seed = derive_seed({s, tag(Stream::kData), 0x1000u + m});
            fd.clients.push_back(generate_dataset(f, c.fl.samples_per_client));
          }
          f.seed = derive_seed({s, tag(Stream::kData), 0x7e57u});
          fd.test = generate_dataset(f, 128);
          FLConfig fl = c.fl;
          fl.seed = derive_seed({s, tag(Stream::kSampling)});
          TrainingHooks hooks;
          if (!victim_chain.empty())
            hooks.transform_payload = [&](GradientPayload p) {
              return apply_chain(std::move(p), seeded(victim_chain, {s, p.round, p.client}));
            };
          const auto records = run_training(fl, spec, fd, hooks);
          json row = {{"defense", chain_name(chain)}, {"seed", i},     {"psnr", r.metrics.mean_psnr},
                      {"mse", r.metrics.mean_mse},    {"brr", r.metrics.brr}, {"test_accuracy", records.back().test_accuracy}};
          return json::array({row});
        });
      }
      break;
    }
    case Scenario::kAnalyticDemo: {
      ModelChoice m = c.model;
      m.preset = "mlp";
      const ModelSpec spec = resolve_model(m, {w.analytic_input_dim}, 1);
      per_seed("analytic", [&ctx, spec](std::size_t i, std::uint64_t s, const fs::path&, const std::string&) {
        const auto& w = ctx.c.sweep;
        const ModelState state = build_model(spec, InitScheme::kUniformFanIn, derive_seed({s, tag(Stream::kInit)}));
        auto rng = make_rng({s, tag(Stream::kData)});
        std::uniform_real_distribution<double> u(0.0, 1.0);
        ClientDataset d;
        d.x = Tensor({1, w.analytic_input_dim});
        for (auto& v : d.x.data()) v = u(rng);
        const int y = (rng() & 1) ? 1 : -1;
        d.y = {y};
        json rows = json::array();
        for (auto steps : w.updates) {
          const auto lt = local_train(spec, state, d, steps, 1, w.analytic_learning_rate, 0, LocalTrainOptions{true});
          double inv = std::nan("");
          if (steps == 1) {
            const Tensor rec = analytic_invert(lt.payload, spec, state, y);
            inv = l2_norm(rec - d.x) / l2_norm(d.x);
          }
          const DriftPrediction p = predict_multiupdate_drift(spec, state, y, lt.step_gradients);
          rows.push_back({{"seed", i},
                          {"updates", steps},
                          {"inversion_error", inv},
                          {"t_star", p.t_star},
                          {"predicted_drift", p.predicted_drift},
                          {"actual_drift", p.actual_drift},
                          {"x_error", p.x_error}});
        }
        return rows;
      });
      break;
    }
    case Scenario::kTheorem2Probe: {
      for (const auto& hidden : w.theorem2_hidden) {
        ModelChoice m = c.model;
        m.preset = "mlp";
        m.hidden = hidden;
        const ModelSpec spec = resolve_model(m, {w.theorem2_input_dim}, 1);
        std::string name = "h";
        for (auto h : hidden) name += std::to_string(h) + "-";
        name.pop_back();
        per_seed(name, [&ctx, spec, name](std::size_t i, std::uint64_t s, const fs::path&, const std::string&) {
          const auto& w = ctx.c.sweep;
          const ModelState state = build_model(spec, InitScheme::kUniformFanIn, derive_seed({s, tag(Stream::kInit)}));
          auto rng = make_rng({s, tag(Stream::kData)});
          std::uniform_real_distribution<double> u(0.0, 1.0);
          Tensor x({w.theorem2_batch, w.theorem2_input_dim});
          for (auto& v : x.data()) v = u(rng);
          Labels y(w.theorem2_batch);
          for (auto& l : y) l = (rng() & 1) ? 1 : -1;
          const JacobianProbe p = probe_jacobian(spec, state, x, y, ctx.c.theorem2);
          return json::array({{{"net", name},
                               {"seed", i},
                               {"parameters", p.parameters},
                               {"input_dim", p.input_dim},
                               {"numerical_rank", p.numerical_rank},
                               {"sigma_min", p.singular_values.empty() ? 0.0 : p.singular_values.back()},
                               {"relative_change", p.relative_change}}});
        });
      }
      break;
    }
  }
  return jobs;
}

std::string cell(const json& v) {
  if (v.is_null()) return "nan";
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_float()) return format_number(v.get<double>());
  if (v.is_number()) return v.dump();
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

TrialResult run_trial(const Trial& t, const MetricConfig& metrics) {
  const auto start = std::chrono::steady_clock::now();
  const ClientDataset data = draw_batch(t.family, t.pool, t.victim.samples, t.seed);
  const ModelState state = build_model(t.spec, InitScheme::kUniformFanIn, derive_seed({t.seed, tag(Stream::kInit)}));
  const auto lt = local_train(t.spec, state, data, t.victim.epochs, t.victim.batch_size, t.victim.learning_rate,
                              derive_seed({t.seed, tag(Stream::kShuffle)}));
  const GradientPayload payload = t.defenses.empty() ? lt.payload : apply_chain(lt.payload, t.defenses);
  AttackConfig a = t.attack;
  a.seed = derive_seed({t.seed, tag(Stream::kAttackInit)});
  AttackTarget target{t.spec, state, payload, data.x.shape(), data.y};
  TrialResult r;
  if (a.kind == AttackKind::kGiaL) {
    if (!t.generator) fail(ErrorCode::kConfig, "run_trial", "gia_l needs a generator");
    r.reconstruction = run_gia_l(a, target, *t.generator).reconstructed;
  } else if (a.kind == AttackKind::kGiaO) {
    r.reconstruction = run_gia_o(a, target).reconstructed;
  } else {
    fail(ErrorCode::kConfig, "run_trial", "analytic attacks run in analytic_demo");
  }
  r.truth = data.x;
  r.metrics = evaluate_reconstruction(r.truth, r.reconstruction, metrics);
  r.u_actual = payload.u_actual;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

ScenarioResult run_scenario(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  auto log = [&](const std::string& m) {
    if (options.log) options.log(m);
  };
  ScenarioResult out;
  out.dir = config.output_dir;
  out.config_hash = config_hash(config);
  const std::string hash = hex(out.config_hash);
  fs::create_directories(out.dir / "jobs");
  write_file(out.dir / "config.json", to_json(config).dump(2) + "\n");

  Context ctx{config, {config.data.family.channels, config.data.family.resolution, config.data.family.resolution}, {}, {}};
  if (config.data.kind == "cifar") ctx.pool = load_cifar_binary(config.data.path, ctx.sample_shape);
  const std::vector<Job> jobs = build_jobs(ctx);

  auto job_file = [&](const Job& j) { return out.dir / "jobs" / (j.key + ".json"); };
  auto done = [&](const Job& j) {
    const fs::path p = job_file(j);
    if (!fs::exists(p)) return false;
    try {
      const json d = json::parse(read_file(p));
      return d.value("config_hash", "") == hash && d.contains("rows");
    } catch (const json::exception&) {
      return false;  // partial write from an interrupted run
    }
  };
  std::vector<const Job*> pending;
  for (const auto& j : jobs)
    if (!done(j)) pending.push_back(&j);
  out.jobs_skipped = jobs.size() - pending.size();
  out.jobs_run = pending.size();
  log(to_string(config.scenario) + ": " + std::to_string(pending.size()) + " jobs to run, " +
      std::to_string(out.jobs_skipped) + " reused");

  const bool needs_generator =
      std::find(config.sweep.attack_kinds.begin(), config.sweep.attack_kinds.end(), "gia_l") !=
          config.sweep.attack_kinds.end() &&
      config.scenario == Scenario::kUpdateSweep;
  if (needs_generator && !pending.empty()) {
    GeneratorSpec g = config.generator;
    g.channels = g.family.channels = config.data.family.channels;
    g.resolution = g.family.resolution = config.data.family.resolution;
    log("training generator");
    ctx.generator = std::make_shared<Generator>(train_generator(g).generator);
  }

  const std::size_t workers =
      std::max<std::size_t>(1, std::min(options.jobs ? options.jobs : jobs_from_env(), std::max<std::size_t>(1, pending.size())));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  std::exception_ptr error;
  std::string failed_job;
  auto worker = [&] {
    if (workers > 1) omp_set_num_threads(1);
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size() || stop) return;
      const Job& j = *pending[k];
      try {
        const auto start = std::chrono::steady_clock::now();
        const json rows = j.run(out.dir);
        const json doc{{"schema_version", kCsvSchemaVersion}, {"config_hash", hash}, {"key", j.key}, {"rows", rows}};
        // Write then rename so an interrupted run never leaves a valid-looking file.
        const fs::path tmp = job_file(j).string() + ".tmp";
        write_file(tmp, doc.dump() + "\n");
        fs::rename(tmp, job_file(j));
        std::lock_guard lock(mu);
        log(j.key + " done in " +
            format_number(std::round(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() * 10) / 10) + " s");
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) {
          error = std::current_exception();
          failed_job = j.key;
        }
        stop = true;
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (error) {
    json report{{"scenario", to_string(config.scenario)}, {"job", failed_job}, {"config_hash", hash}};
    try {
      std::rethrow_exception(error);
    } catch (const Error& e) {
      report.update({{"code", to_string(e.code())}, {"context", e.context()}, {"message", e.what()}});
    } catch (const std::exception& e) {
      report.update({{"code", "unknown"}, {"message", e.what()}});
    }
    write_file(out.dir / "error.json", report.dump(2) + "\n");
    std::rethrow_exception(error);
  }
  if (fs::exists(out.dir / "error.json")) fs::remove(out.dir / "error.json");

  out.summary.scenario = to_string(config.scenario);
  out.summary.columns = scenario_columns(config.scenario);
  std::string jsonl = json{{"schema_version", kCsvSchemaVersion}, {"scenario", out.summary.scenario}, {"config_hash", hash}}.dump() + "\n";
  for (const auto& j : jobs) {
    const json d = json::parse(read_file(job_file(j)));
    for (const auto& row : d.at("rows")) {
      json line = row;
      line["job"] = j.key;
      jsonl += line.dump() + "\n";
      std::vector<std::string> cells;
      for (const auto& col : out.summary.columns) cells.push_back(cell(row.contains(col) ? row.at(col) : json()));
      out.summary.rows.push_back(std::move(cells));
    }
  }
  write_file(out.dir / "results.jsonl", jsonl);
  write_csv(out.dir / "summary.csv", out.summary);
  if (options.plots) emit_plots(out.dir);
  return out;
}

}  // namespace gleak
