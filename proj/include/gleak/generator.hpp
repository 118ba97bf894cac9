// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gleak/attack.hpp"
#include "gleak/graph.hpp"
#include "gleak/synthetic.hpp"

namespace gleak {

/// Linear stem to [w0, R/4, R/4], then transposed convolutions
/// (k4 s2 p1) -> w1, (k4 s2 p1) -> w2, (k3 s1 p1) -> channels, sigmoid out.
struct GeneratorSpec {
  std::size_t latent_dim = 32;
  std::vector<std::size_t> widths{32, 32, 16};
  std::size_t channels = 3;
  std::size_t resolution = 16;
  // Latent-code (encoder-free) training on a synthetic family.
  SyntheticFamily family;
  std::size_t samples = 4096;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double step_size = 1e-2;
  double latent_step_size = 0.1;
  std::uint64_t seed = 0;
};

void validate(const GeneratorSpec& spec);
Shape generator_output_shape(const GeneratorSpec& spec);  // per sample

struct Generator {
  GeneratorSpec spec;
  std::vector<Tensor> params;  // stem W, b, then (w, b) per transposed conv
};

Generator init_generator(const GeneratorSpec& spec, std::uint64_t seed);

/// z [B, latent_dim] -> images [B, C, R, R].
NodeId generator_forward(Graph& graph, const GeneratorSpec& spec, std::span<const NodeId> params,
                         NodeId z);
Tensor decode(const Generator& gen, const Tensor& z);

/// Latent draw used for training codes and attack initialisation.
Tensor sample_latents(std::size_t n, std::size_t latent_dim, std::mt19937_64& rng);

struct GeneratorTraining {
  Generator generator;
  Tensor latents;                   // [samples, latent_dim], learned codes
  std::vector<double> epoch_loss;   // mean pixel MSE per epoch
};

/// Jointly fits generator weights and one free latent code per sample to
/// minimise reconstruction MSE on `spec.samples` images of `spec.family`.
GeneratorTraining train_generator(const GeneratorSpec& spec);
GeneratorTraining train_generator(const GeneratorSpec& spec, const ClientDataset& data);

/// Latent-space attack: stage 1 optimises z with the generator frozen,
/// stage 2 (finetune_iterations > 0) also updates the generator weights.
AttackResult run_gia_l(const AttackConfig& config, const AttackTarget& target, const Generator& gen);

std::string to_json(const GeneratorSpec& spec);
GeneratorSpec generator_spec_from_json(const std::string& text);

}  // namespace gleak
