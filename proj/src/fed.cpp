// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/fed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>

#include <json.hpp>

#include "gleak/error.hpp"
#include "gleak/rng.hpp"

namespace gleak {

std::string to_string(Protocol p) { return p == Protocol::kFedSgd ? "fedsgd" : "fedavg"; }
std::string to_string(PayloadKind k) { return k == PayloadKind::kGradient ? "gradient" : "update"; }

Protocol protocol_from_string(const std::string& s) {
  if (s == "fedsgd") return Protocol::kFedSgd;
  if (s == "fedavg") return Protocol::kFedAvg;
  fail(ErrorCode::kConfig, "protocol", "unknown protocol '" + s + "'");
}

void validate(const FLConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::kConfig, "FLConfig", what);
  };
  need(c.num_clients > 0 && c.clients_per_round > 0 && c.local_epochs > 0 && c.batch_size > 0 &&
           c.samples_per_client > 0,
       "all counts must be positive");
  need(c.clients_per_round <= c.num_clients, "clients_per_round exceeds num_clients");
  need(c.batch_size <= c.samples_per_client, "batch_size exceeds samples_per_client");
  need(c.learning_rate >= 0.0 && std::isfinite(c.learning_rate), "learning_rate must be >= 0");
  need(c.victim < c.num_clients, "victim index out of range");
  if (c.protocol == Protocol::kFedSgd)
    need(c.batch_size == c.samples_per_client && c.local_epochs == 1,
         "fedsgd requires B == N and E == 1");
}

LocalTrainResult local_train(const ModelSpec& spec, const ModelState& state,
                             const ClientDataset& data, std::size_t epochs,
                             std::size_t batch_size, double lr, std::uint64_t seed,
                             const LocalTrainOptions& options) {
  data.check();
  const std::size_t n = data.size();
  if (epochs == 0 || batch_size == 0 || batch_size > n)
    fail(ErrorCode::kConfig, "local_train",
         "need E > 0 and 0 < B <= N (B=" + std::to_string(batch_size) +
             ", N=" + std::to_string(n) + ")");
  const std::size_t per_epoch = n / batch_size;  // a ragged tail batch is dropped
  const bool single = epochs == 1 && batch_size == n;

  Tensor w = flatten(state);
  const Tensor w0 = w;
  LocalTrainResult res;
  auto drop_rng = make_rng({seed, tag(Stream::kDropout)});
  const ForwardOptions fopts{&drop_rng};
  Tensor first_grad;
  std::size_t step = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    if (!single) {
      auto rng = make_rng({seed, tag(Stream::kShuffle), e});
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::span<const std::size_t> idx(order.data() + b * batch_size, batch_size);
      const LossGradient lg =
          loss_gradient(spec, unflatten(spec, w), data.rows(idx), data.labels(idx), fopts);
      if (!std::isfinite(lg.loss) || !lg.gradient.all_finite())
        fail(ErrorCode::kNonFinite, "local_train", "non-finite loss at step " + std::to_string(step));
      if (step == 0) first_grad = lg.gradient;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * lg.gradient[i];
      res.step_losses.push_back(lg.loss);
      if (options.record_steps) res.step_gradients.push_back(lg.gradient);
    }
  }
  res.state = unflatten(spec, w);
  GradientPayload& p = res.payload;
  p.u_actual = step;
  p.training = {epochs, batch_size, n, lr};
  if (single) {
    p.kind = PayloadKind::kGradient;
    p.value = std::move(first_grad);
  } else {
    p.kind = PayloadKind::kUpdate;
    p.value = w - w0;
  }
  return res;
}

ModelState aggregate(const ModelSpec& spec, std::span<const GradientPayload> payloads,
                     Protocol protocol, const ModelState& global, double lr) {
  if (payloads.empty()) fail(ErrorCode::kInvalidArgument, "aggregate", "no payloads");
  const PayloadKind kind = payloads[0].kind;
  for (const auto& p : payloads) {
    if (p.kind != kind) fail(ErrorCode::kInvalidArgument, "aggregate", "mixed payload kinds");
    if (p.round != payloads[0].round)
      fail(ErrorCode::kInvalidArgument, "aggregate", "payloads from different rounds");
  }
  const PayloadKind expected =
      protocol == Protocol::kFedSgd ? PayloadKind::kGradient : PayloadKind::kUpdate;
  if (kind != expected)
    fail(ErrorCode::kInvalidArgument, "aggregate",
         to_string(protocol) + " cannot aggregate " + to_string(kind) + " payloads");
  // Fixed summation order (by client id) keeps the result independent of
  // the order payloads arrive in.
  std::vector<const GradientPayload*> sorted;
  for (const auto& p : payloads) sorted.push_back(&p);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto* a, const auto* b) { return a->client < b->client; });
  Tensor w = flatten(global);
  Tensor acc(w.shape());
  for (const auto* p : sorted) {
    if (p->value.size() != w.size())
      fail(ErrorCode::kShapeMismatch, "aggregate", "payload size differs from model");
    for (std::size_t i = 0; i < w.size(); ++i) acc[i] += p->value[i];
  }
  const double scale =
      protocol == Protocol::kFedSgd ? -lr : 1.0 / static_cast<double>(payloads.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * acc[i];
  return unflatten(spec, w);
}

double evaluate_accuracy(const ModelSpec& spec, const ModelState& state, const ClientDataset& test) {
  if (test.size() == 0) fail(ErrorCode::kInvalidArgument, "evaluate_accuracy", "empty test set");
  test.check();
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, test.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor z = predict(spec, state, test.rows(idx));
    const std::size_t c = z.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      int pred;
      if (c == 1) {
        pred = z[r] > 0.0 ? 1 : -1;
      } else {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
          if (z[r * c + j] > z[r * c + best]) best = j;
        pred = static_cast<int>(best);
      }
      if (pred == test.y[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::vector<FLRoundRecord> run_training(const FLConfig& config, const ModelSpec& spec,
                                        const FederatedData& data, const TrainingHooks& hooks,
                                        std::optional<ModelState> initial) {
  validate(config);
  if (data.clients.size() != config.num_clients)
    fail(ErrorCode::kConfig, "run_training", "dataset count differs from num_clients");
  for (const auto& c : data.clients)
    if (c.size() != config.samples_per_client)
      fail(ErrorCode::kConfig, "run_training", "client dataset size differs from N");

  ModelState global =
      initial ? *initial : build_model(spec, InitScheme::kUniformFanIn, config.seed);
  std::vector<FLRoundRecord> records;
  for (std::size_t t = 0; t < config.rounds; ++t) {
    std::vector<std::size_t> ids(config.num_clients);
    std::iota(ids.begin(), ids.end(), 0);
    auto srng = make_rng({config.seed, tag(Stream::kSampling), t});
    std::shuffle(ids.begin(), ids.end(), srng);
    ids.resize(config.clients_per_round);
    if (config.victim_always_participates &&
        std::find(ids.begin(), ids.end(), config.victim) == ids.end())
      ids.back() = config.victim;
    std::sort(ids.begin(), ids.end());

    std::vector<LocalTrainResult> results(ids.size());
    std::vector<std::exception_ptr> errors(ids.size());
    const long nk = static_cast<long>(ids.size());
#pragma omp parallel for schedule(dynamic)
    for (long k = 0; k < nk; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      try {
        results[kk] = local_train(spec, global, data.clients[ids[kk]], config.local_epochs,
                                  config.batch_size, config.learning_rate,
                                  derive_seed({config.seed, t, ids[kk], tag(Stream::kShuffle)}));
      } catch (...) {
        errors[kk] = std::current_exception();
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    std::vector<GradientPayload> payloads;
    double loss_sum = 0.0;
    FLRoundRecord rec;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      results[k].payload.round = t;
      results[k].payload.client = ids[k];
      loss_sum += results[k].step_losses.front();
      if (hooks.transform_payload) results[k].payload = hooks.transform_payload(std::move(results[k].payload));
      payloads.push_back(results[k].payload);
      if (ids[k] == config.victim) rec.victim_payload = results[k].payload;
    }
    ModelState next = aggregate(spec, payloads, config.protocol, global, config.learning_rate);
    rec.round = t;
    char buf[32];
    std::snprintf(buf, sizeof buf, "round_%04zu", t);
    rec.snapshot_id = buf;
    rec.participants = ids;
    rec.mean_client_loss = loss_sum / static_cast<double>(ids.size());
    rec.test_accuracy = data.test.size() ? evaluate_accuracy(spec, next, data.test) : 0.0;
    if (hooks.on_round) {
      hooks.on_round({t, global, next, rec.victim_payload ? &*rec.victim_payload : nullptr,
                      data.clients[config.victim]});
    }
    rec.global_before = std::move(global);
    global = std::move(next);
    records.push_back(std::move(rec));
  }
  return records;
}

std::string to_json_line(const FLRoundRecord& r) {
  nlohmann::json j{{"round", r.round},
                   {"snapshot_id", r.snapshot_id},
                   {"test_accuracy", r.test_accuracy},
                   {"mean_client_loss", r.mean_client_loss},
                   {"participants", r.participants}};
  if (r.victim_payload) {
    const auto& p = *r.victim_payload;
    j["victim_payload"] = {{"kind", to_string(p.kind)},
                           {"client", p.client},
                           {"u_actual", p.u_actual},
                           {"l2_norm", l2_norm(p.value)},
                           {"size", p.value.size()},
                           {"defenses", p.defenses}};
  } else {
    j["victim_payload"] = nullptr;
  }
  return j.dump();
}

}  // namespace gleak
