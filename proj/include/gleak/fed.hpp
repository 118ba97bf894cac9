// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gleak/dataset.hpp"
#include "gleak/model.hpp"

namespace gleak {

enum class Protocol { kFedSgd, kFedAvg };

struct FLConfig {
  std::size_t num_clients = 5;        // M
  std::size_t clients_per_round = 5;  // K
  std::size_t rounds = 1;             // T
  std::size_t local_epochs = 1;       // E
  std::size_t batch_size = 1;         // B
  std::size_t samples_per_client = 1; // N
  double learning_rate = 0.1;         // eta
  Protocol protocol = Protocol::kFedSgd;
  std::uint64_t seed = 0;
  std::size_t victim = 0;
  bool victim_always_participates = true;

  std::size_t local_steps() const { return local_epochs * (samples_per_client / batch_size); }
};

void validate(const FLConfig& config);

enum class PayloadKind { kGradient, kUpdate };

/// What the victim's local run looked like; the worst-case adversary gets it.
struct LocalTrainingInfo {
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  std::size_t samples = 1;
  double learning_rate = 0.0;
};

struct GradientPayload {
  PayloadKind kind = PayloadKind::kGradient;
  Tensor value;  // flat
  std::size_t round = 0;
  std::size_t client = 0;
  std::size_t u_actual = 1;
  LocalTrainingInfo training;
  std::vector<std::string> defenses;  // applied post-processing chain, in order
};

struct LocalTrainOptions {
  bool record_steps = false;  // keep the flat gradient of every step
};

struct LocalTrainResult {
  ModelState state;
  GradientPayload payload;
  std::vector<Tensor> step_gradients;
  std::vector<double> step_losses;
};

/// Plain mini-batch SGD, W <- W - eta * grad, for E * N / B steps with a
/// seeded reshuffle each epoch.
LocalTrainResult local_train(const ModelSpec& spec, const ModelState& state,
                             const ClientDataset& data, std::size_t epochs,
                             std::size_t batch_size, double learning_rate, std::uint64_t seed,
                             const LocalTrainOptions& options = {});

/// FedSGD: W - eta * sum_k g_k. FedAvg: mean of the local models.
ModelState aggregate(const ModelSpec& spec, std::span<const GradientPayload> payloads,
                     Protocol protocol, const ModelState& global, double learning_rate);

/// Top-1 accuracy. Binary heads predict +1 for a positive logit; argmax
/// ties resolve to the lowest class.
double evaluate_accuracy(const ModelSpec& spec, const ModelState& state, const ClientDataset& test);

struct FederatedData {
  std::vector<ClientDataset> clients;
  ClientDataset test;
};

struct FLRoundRecord {
  std::size_t round = 0;
  std::string snapshot_id;
  double test_accuracy = 0.0;
  double mean_client_loss = 0.0;
  std::vector<std::size_t> participants;
  ModelState global_before;  // state the round's clients started from
  std::optional<GradientPayload> victim_payload;
};

struct RoundContext {
  std::size_t round;
  const ModelState& global_before;
  const ModelState& global_after;
  const GradientPayload* victim_payload;  // null when the victim sat out
  const ClientDataset& victim_data;
};

struct TrainingHooks {
  std::function<void(const RoundContext&)> on_round;
  // Applied to every client payload before aggregation, e.g. a defense chain.
  std::function<GradientPayload(GradientPayload)> transform_payload;
};

std::vector<FLRoundRecord> run_training(const FLConfig& config, const ModelSpec& spec,
                                        const FederatedData& data, const TrainingHooks& hooks = {},
                                        std::optional<ModelState> initial = std::nullopt);

/// One JSON object per line; tensors are referenced by snapshot id.
std::string to_json_line(const FLRoundRecord& record);
std::string to_string(Protocol p);
std::string to_string(PayloadKind k);
Protocol protocol_from_string(const std::string& s);

}  // namespace gleak
