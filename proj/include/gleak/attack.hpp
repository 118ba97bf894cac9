// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gleak/fed.hpp"
#include "gleak/graph.hpp"
#include "gleak/metrics.hpp"
#include "gleak/model.hpp"

namespace gleak {

enum class AttackKind { kGiaO, kGiaL, kAnalytic };
enum class Distance { kL2, kCosine };
enum class OptimizerKind { kAdam, kSgd };
/// BST approximates any update by one full-batch step; WST knows B, E and
/// eta (not the shuffle seed) and unrolls the local steps.
enum class AdversaryCase { kBst, kWst };

struct AttackConfig {
  AttackKind kind = AttackKind::kGiaO;
  Distance distance = Distance::kL2;
  double tv_weight = 1e-5;
  std::size_t iterations = 2000;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double step_size = 0.1;
  bool step_decay = true;  // x0.1 at 3/8, 5/8 and 7/8 of the iteration budget
  std::size_t restarts = 1;  // best final loss wins; diverged runs are discarded
  bool labels_known = true;
  AdversaryCase adversary_case = AdversaryCase::kBst;
  std::uint64_t seed = 0;
  std::vector<std::size_t> layer_subset;  // match only these layers' gradients; empty = all
  bool clamp_to_box = true;               // project the dummy into [0, 1] after every step
  std::size_t max_unroll = 16;
  // gia_l
  double latent_step_size = 0.01;
  std::size_t finetune_iterations = 0;
  double finetune_step_size = 1e-3;
};

void validate(const AttackConfig& config);

/// What the adversary observes, plus the shape of the victim batch.
struct AttackTarget {
  const ModelSpec& spec;
  const ModelState& state;  // global model at the attacked round
  const GradientPayload& payload;
  Shape batch_shape;  // [N, sample...]
  Labels labels;      // ground truth, used when labels_known
};

struct AttackResult {
  Tensor reconstructed;
  Labels labels;
  std::vector<double> loss_trace;
  double wallclock_seconds = 0.0;
  std::uint64_t seed = 0;
  std::size_t restart = 0;  // index of the winning restart
  std::optional<MetricsReport> metrics;
};

std::string to_json(const AttackResult& result, const AttackConfig& config);

/// Batch shape against the model input, payload size against the model.
void validate(const AttackTarget& target);
/// Ground truth when labels_known, else inferred from the payload.
Labels attack_labels(const AttackConfig& config, const AttackTarget& target);

/// The one-step gradient the payload stands for: the gradient itself, or
/// update / (-eta).
Tensor target_gradient(const GradientPayload& payload);

/// Anisotropic total variation over the two trailing axes of x [B, C, H, W],
/// averaged over the batch.
NodeId tv_prior(Graph& graph, NodeId x);
double tv_prior(const Tensor& x);

/// Per-tensor gradient nodes the victim would have produced from dummy x,
/// summed over the simulated local steps (one step unless WST).
std::vector<NodeId> simulated_gradient(Graph& graph, NodeId x, const Labels& labels,
                                       const AttackTarget& target, AdversaryCase adversary,
                                       std::size_t max_unroll);

/// Dist(simulated gradient, target gradient) + tv_weight * TV(x), as a
/// differentiable scalar node.
NodeId gradient_match_loss(Graph& graph, NodeId x, const Labels& labels, const AttackTarget& target,
                           const AttackConfig& config);

/// Cosine or squared L2 distance between per-tensor gradient nodes and a
/// flat target, restricted to the layers in `layer_subset` when non-empty.
NodeId gradient_distance(Graph& graph, std::span<const NodeId> dummy, const Tensor& target_flat,
                         const ModelSpec& spec, Distance distance,
                         std::span<const std::size_t> layer_subset);

/// Step size at iteration `it` of `total` under the optional decay schedule.
double scheduled_step(double base, std::size_t it, std::size_t total, bool decay);

/// Optimization-based attack.
AttackResult run_gia_o(const AttackConfig& config, const AttackTarget& target);

// Analytic path for binary-logistic MLPs.

/// -t / (1 + e^t), the value of (dl/dW_L) . W_L at signed logit t = y mu.
double logit_objective(double t);
double logit_objective_derivative(double t);
/// Turning point of logit_objective; it is strictly decreasing below it.
double logit_turning_point();
/// Root of logit_objective(t) = observed on the decreasing branch.
double solve_logit(double observed);
/// Both roots when the observation admits two, decreasing branch first.
std::vector<double> logit_roots(double observed);

/// (dl/dW_L) . W_L for a flat gradient, with the bias folded in as an
/// extra column whose input is 1.
double last_layer_projection(const ModelSpec& spec, const ModelState& state, const Tensor& gradient);

/// Rebuilds the input from a gradient, given the signed logit t = y mu:
/// recovers F_{L-1} from the rank-one last-layer gradient, then peels each
/// layer with a least-squares solve and the activation inverse.
Tensor invert_from_logit(const ModelSpec& spec, const ModelState& state, const Tensor& gradient,
                         int label, double t);

/// Single-sample, single-update reconstruction.
Tensor analytic_invert(const GradientPayload& payload, const ModelSpec& spec,
                       const ModelState& state, int label);

struct DriftPrediction {
  double t_star = 0.0;        // signed logit from the first step
  double predicted_drift = 0.0;  // mu^rec - mu^*
  double actual_drift = 0.0;     // from solving on the accumulated gradient
  double x_error = 0.0;          // relative L2 distance of the two reconstructions
};

/// First-order drift of the recovered logit when the payload accumulates U
/// steps. `step_gradients` are the flat per-step gradients.
DriftPrediction predict_multiupdate_drift(const ModelSpec& spec, const ModelState& state,
                                          int label, std::span<const Tensor> step_gradients);

struct LabelInference {
  Labels labels;
  std::vector<bool> present;
  bool best_effort = false;  // batch or multi-update payload
};

/// Label recovery from the sign structure of the last-layer gradient.
LabelInference infer_labels(const GradientPayload& payload, const ModelSpec& spec,
                            std::size_t batch_size);

std::string to_string(AttackKind k);
std::string to_string(Distance d);
std::string to_string(AdversaryCase a);
AttackKind attack_kind_from_string(const std::string& s);
Distance distance_from_string(const std::string& s);
AdversaryCase adversary_case_from_string(const std::string& s);
OptimizerKind optimizer_from_string(const std::string& s);

/// Adam or SGD on a flat tensor.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double step_size, std::size_t size);
  void step(Tensor& x, const Tensor& grad);
  double step_size() const { return lr_; }
  void set_step_size(double lr) { lr_ = lr; }

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t t_ = 0;
  Tensor m_, v_;
};

}  // namespace gleak
