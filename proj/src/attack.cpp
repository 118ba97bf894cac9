// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/attack.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <json.hpp>

#include "gleak/error.hpp"
#include "gleak/rng.hpp"

namespace gleak {

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kGiaO: return "gia_o";
    case AttackKind::kGiaL: return "gia_l";
    case AttackKind::kAnalytic: return "analytic";
  }
  return "?";
}
std::string to_string(Distance d) { return d == Distance::kL2 ? "l2" : "cosine"; }
std::string to_string(AdversaryCase a) { return a == AdversaryCase::kBst ? "bst" : "wst"; }

AttackKind attack_kind_from_string(const std::string& s) {
  for (auto k : {AttackKind::kGiaO, AttackKind::kGiaL, AttackKind::kAnalytic})
    if (to_string(k) == s) return k;
  fail(ErrorCode::kConfig, "attack", "unknown attack kind '" + s + "'");
}
Distance distance_from_string(const std::string& s) {
  if (s == "l2") return Distance::kL2;
  if (s == "cosine") return Distance::kCosine;
  fail(ErrorCode::kConfig, "attack", "unknown distance '" + s + "'");
}
AdversaryCase adversary_case_from_string(const std::string& s) {
  if (s == "bst") return AdversaryCase::kBst;
  if (s == "wst") return AdversaryCase::kWst;
  fail(ErrorCode::kConfig, "attack", "unknown adversary case '" + s + "'");
}
OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  fail(ErrorCode::kConfig, "attack", "unknown optimizer '" + s + "'");
}

void validate(const AttackConfig& c) {
  if (!(c.tv_weight >= 0.0)) fail(ErrorCode::kConfig, "AttackConfig", "tv_weight must be >= 0");
  if (!(c.step_size > 0.0) || !(c.latent_step_size > 0.0) || !(c.finetune_step_size > 0.0))
    fail(ErrorCode::kConfig, "AttackConfig", "step sizes must be > 0");
  if (c.restarts == 0) fail(ErrorCode::kConfig, "AttackConfig", "restarts must be >= 1");
  if (c.max_unroll == 0) fail(ErrorCode::kConfig, "AttackConfig", "max_unroll must be >= 1");
}

Optimizer::Optimizer(OptimizerKind kind, double step_size, std::size_t size)
    : kind_(kind), lr_(step_size), m_(Shape{size}), v_(Shape{size}) {}

void Optimizer::step(Tensor& x, const Tensor& grad) {
  if (grad.size() != x.size() || x.size() != m_.size())
    fail(ErrorCode::kShapeMismatch, "Optimizer", "parameter and gradient sizes differ");
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr_ * grad[i];
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < x.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    x[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

double scheduled_step(double base, std::size_t it, std::size_t total, bool decay) {
  if (!decay) return base;
  double lr = base;
  for (std::size_t k : {3u, 5u, 7u})
    if (8 * it >= k * total) lr *= 0.1;
  return lr;
}

Tensor target_gradient(const GradientPayload& p) {
  if (p.kind == PayloadKind::kGradient) return p.value;
  const double lr = p.training.learning_rate;
  if (!(lr > 0.0))
    fail(ErrorCode::kPrecondition, "target_gradient", "update payload needs eta > 0 to rescale");
  return (-1.0 / lr) * p.value;
}

namespace {

// Pairs of flat offsets (a, b) whose difference x[b] - x[a] enters TV.
std::pair<IndexMap, IndexMap> tv_pairs(const Shape& s, bool vertical) {
  const std::size_t bc = s[0] * s[1], h = s[2], w = s[3];
  auto a = std::make_shared<std::vector<kernels::Index>>();
  auto b = std::make_shared<std::vector<kernels::Index>>();
  for (std::size_t p = 0; p < bc; ++p)
    for (std::size_t i = 0; i + (vertical ? 1 : 0) < h; ++i)
      for (std::size_t j = 0; j + (vertical ? 0 : 1) < w; ++j) {
        const std::size_t at = (p * h + i) * w + j;
        a->push_back(static_cast<kernels::Index>(at));
        b->push_back(static_cast<kernels::Index>(vertical ? at + w : at + 1));
      }
  return {a, b};
}

}  // namespace

NodeId tv_prior(Graph& g, NodeId x) {
  const Shape s = g.shape(x);
  if (s.size() != 4) fail(ErrorCode::kShapeMismatch, "tv_prior", "expected [B,C,H,W], got " + shape_str(s));
  NodeId total = kNoNode;
  for (bool vertical : {false, true}) {
    auto [a, b] = tv_pairs(s, vertical);
    if (a->empty()) continue;
    const Shape n{a->size()};
    const NodeId d = ops::sub(g, ops::gather(g, x, b, n), ops::gather(g, x, a, n));
    const NodeId part = ops::sum(g, ops::abs(g, d));
    total = total == kNoNode ? part : ops::add(g, total, part);
  }
  if (total == kNoNode) return g.constant(Tensor::scalar(0.0));
  return ops::scale(g, total, 1.0 / static_cast<double>(s[0]));
}

double tv_prior(const Tensor& x) {
  Graph g;
  return g.value(tv_prior(g, g.constant(x))).item();
}

std::vector<NodeId> simulated_gradient(Graph& g, NodeId x, const Labels& labels,
                                       const AttackTarget& t, AdversaryCase adversary,
                                       std::size_t max_unroll) {
  const BoundParams p = bind_params(g, t.state, true);
  std::vector<NodeId> w = flat_nodes(p);
  const LossKind kind = default_loss(t.spec);
  const Shape xs = g.shape(x);
  const std::size_t n = xs[0];
  if (labels.size() != n) fail(ErrorCode::kShapeMismatch, "simulated_gradient", "label count differs from batch");

  std::size_t b = n, steps = 1;
  const LocalTrainingInfo& tr = t.payload.training;
  if (adversary == AdversaryCase::kWst && t.payload.kind == PayloadKind::kUpdate) {
    if (tr.samples != n || tr.batch_size == 0 || tr.batch_size > n)
      fail(ErrorCode::kPrecondition, "wst", "training details do not fit the dummy batch");
    b = tr.batch_size;
    steps = tr.epochs * (n / b);
    if (steps > max_unroll)
      fail(ErrorCode::kPrecondition, "wst",
           "U=" + std::to_string(steps) + " exceeds the unroll cap " + std::to_string(max_unroll));
  }
  const std::size_t per_epoch = n / b;
  const std::size_t per_sample = shape_numel(xs) / n;

  std::vector<NodeId> acc(w.size(), kNoNode);
  for (std::size_t u = 0; u < steps; ++u) {
    NodeId xb = x;
    Labels lb = labels;
    if (b != n) {
      // The adversary does not know the shuffle; it walks the batch in order.
      const std::size_t start = (u % per_epoch) * b;
      auto idx = std::make_shared<std::vector<kernels::Index>>(b * per_sample);
      std::iota(idx->begin(), idx->end(), static_cast<kernels::Index>(start * per_sample));
      Shape bs = xs;
      bs[0] = b;
      xb = ops::gather(g, x, std::move(idx), bs);
      lb.assign(labels.begin() + static_cast<long>(start), labels.begin() + static_cast<long>(start + b));
    }
    const NodeId l = loss(g, forward(t.spec, regroup(t.spec, w), xb, g).logits, lb, kind);
    const GradMap gm = backward(g, l, true, w);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const NodeId gi = gm.contains(w[i]) ? gm.node(w[i]) : g.constant(Tensor(g.shape(w[i])));
      acc[i] = acc[i] == kNoNode ? gi : ops::add(g, acc[i], gi);
      if (u + 1 < steps) w[i] = ops::sub(g, w[i], ops::scale(g, gi, tr.learning_rate));
    }
  }
  return acc;
}

NodeId gradient_distance(Graph& g, std::span<const NodeId> dummy, const Tensor& target_flat,
                         const ModelSpec& spec, Distance distance,
                         std::span<const std::size_t> layer_subset) {
  const auto shapes = parameter_shapes(spec);
  std::vector<bool> use(shapes.size(), layer_subset.empty());
  for (auto l : layer_subset) {
    if (l >= shapes.size() || shapes[l].empty())
      fail(ErrorCode::kInvalidArgument, "gradient_distance",
           "layer " + std::to_string(l) + " has no parameters");
    use[l] = true;
  }
  if (target_flat.size() != parameter_count(spec))
    fail(ErrorCode::kShapeMismatch, "gradient_distance", "target size differs from the model");

  NodeId acc = kNoNode, num = kNoNode, den = kNoNode;
  double tnorm2 = 0.0;
  auto accumulate = [&](NodeId& a, NodeId v) { a = a == kNoNode ? v : ops::add(g, a, v); };
  std::size_t offset = 0, k = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    for (const Shape& s : shapes[l]) {
      const std::size_t len = shape_numel(s);
      if (k >= dummy.size()) fail(ErrorCode::kShapeMismatch, "gradient_distance", "too few gradient nodes");
      if (use[l]) {
        Tensor piece(s, std::vector<double>(target_flat.data().begin() + static_cast<long>(offset),
                                            target_flat.data().begin() + static_cast<long>(offset + len)));
        const NodeId d = dummy[k];
        if (distance == Distance::kL2) {
          const NodeId diff = ops::sub(g, d, g.constant(std::move(piece)));
          accumulate(acc, ops::dot(g, diff, diff));
        } else {
          tnorm2 += dot(piece, piece);
          accumulate(num, ops::dot(g, d, g.constant(std::move(piece))));
          accumulate(den, ops::dot(g, d, d));
        }
      }
      offset += len;
      ++k;
    }
  }
  if (distance == Distance::kL2) return acc;
  if (tnorm2 == 0.0) fail(ErrorCode::kInvalidArgument, "gradient_distance", "cosine against a zero target");
  const NodeId denom = ops::scale(g, ops::sqrt(g, den), std::sqrt(tnorm2));
  return ops::affine(g, ops::div(g, num, denom), -1.0, 1.0);
}

NodeId gradient_match_loss(Graph& g, NodeId x, const Labels& labels, const AttackTarget& t,
                           const AttackConfig& c) {
  const std::vector<NodeId> dummy =
      simulated_gradient(g, x, labels, t, c.adversary_case, c.max_unroll);
  NodeId l = gradient_distance(g, dummy, target_gradient(t.payload), t.spec, c.distance, c.layer_subset);
  // Inputs without spatial axes carry no smoothness prior.
  if (c.tv_weight > 0.0 && g.shape(x).size() == 4)
    l = ops::add(g, l, ops::scale(g, tv_prior(g, x), c.tv_weight));
  return l;
}

void validate(const AttackTarget& t) {
  if (t.batch_shape.size() < 2 || t.batch_shape[0] == 0)
    fail(ErrorCode::kShapeMismatch, "attack", "batch shape needs [N, sample...]");
  const Shape sample(t.batch_shape.begin() + 1, t.batch_shape.end());
  if (sample != t.spec.input_shape)
    fail(ErrorCode::kShapeMismatch, "attack",
         "sample shape " + shape_str(sample) + " differs from model input " + shape_str(t.spec.input_shape));
  if (t.payload.value.size() != parameter_count(t.spec))
    fail(ErrorCode::kShapeMismatch, "attack", "payload size differs from the model");
}

Labels attack_labels(const AttackConfig& c, const AttackTarget& t) {
  const std::size_t n = t.batch_shape[0];
  if (c.labels_known) {
    if (t.labels.size() != n) fail(ErrorCode::kInvalidArgument, "attack", "labels_known but label count differs from batch");
    return t.labels;
  }
  return infer_labels(t.payload, t.spec, n).labels;
}

namespace {

void clamp_unit(Tensor& x) {
  for (auto& v : x.data()) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

AttackResult run_gia_o(const AttackConfig& c, const AttackTarget& t) {
  validate(c);
  validate(t);
  const auto t0 = std::chrono::steady_clock::now();
  const Labels labels = attack_labels(c, t);

  std::optional<AttackResult> best;
  for (std::size_t r = 0; r < c.restarts; ++r) {
    auto rng = make_rng({c.seed, tag(Stream::kAttackInit), r});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor x(t.batch_shape);
    for (auto& v : x.data()) v = u(rng);
    Optimizer opt(c.optimizer, c.step_size, x.size());
    std::vector<double> trace;
    bool ok = true;
    for (std::size_t it = 0;; ++it) {
      Graph g;
      const NodeId xn = g.leaf(x);
      const NodeId l = gradient_match_loss(g, xn, labels, t, c);
      const double v = g.value(l).item();
      if (!std::isfinite(v)) {
        ok = false;
        break;
      }
      trace.push_back(v);
      if (it == c.iterations) break;
      const std::array<NodeId, 1> targets{xn};
      const Tensor gx = backward(g, l, false, targets).tensor(xn);
      if (!gx.all_finite()) {
        ok = false;
        break;
      }
      opt.set_step_size(scheduled_step(c.step_size, it, c.iterations, c.step_decay));
      opt.step(x, gx);
      if (c.clamp_to_box) clamp_unit(x);
    }
    if (!ok) continue;
    if (!best || trace.back() < best->loss_trace.back()) {
      best = AttackResult{};
      best->reconstructed = x;
      best->loss_trace = std::move(trace);
      best->restart = r;
    }
  }
  if (!best) fail(ErrorCode::kNonFinite, "run_gia_o", "every restart diverged");
  best->labels = labels;
  best->seed = c.seed;
  best->wallclock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return *best;
}

// ---------------------------------------------------------------------------
// Analytic path.

namespace {

double sigmoid_neg(double t) {  // 1 / (1 + e^t)
  if (t > 0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

}  // namespace

double logit_objective(double t) { return -t * sigmoid_neg(t); }

double logit_objective_derivative(double t) {
  const double s = sigmoid_neg(t);
  return -s + t * s * (1.0 - s);
}

double logit_turning_point() {
  // t * sigmoid(t) = 1, the only zero of the derivative.
  static const double tc = [] {
    double lo = 1.0, hi = 2.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (mid * (1.0 - sigmoid_neg(mid)) < 1.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }();
  return tc;
}

namespace {

// Bisection for G(t) = obs on [lo, hi] where G(lo) - obs and G(hi) - obs differ in sign.
double bisect_logit(double obs, double lo, double hi) {
  const bool falling = logit_objective(lo) > logit_objective(hi);
  for (int i = 0; i < 400; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    const double v = logit_objective(mid);
    if (v == obs) return mid;
    if ((v > obs) == falling) lo = mid;
    else hi = mid;
  }
  const double t = 0.5 * (lo + hi);
  const double tol = 1e-12 * std::max(1.0, std::abs(obs));
  if (std::abs(logit_objective(t) - obs) > tol)
    fail(ErrorCode::kNonFinite, "solve_logit", "bisection did not reach tolerance");
  return t;
}

}  // namespace

double solve_logit(double obs) {
  if (!std::isfinite(obs)) fail(ErrorCode::kNonFinite, "solve_logit", "observation is not finite");
  const double tc = logit_turning_point();
  const double gmin = logit_objective(tc);
  if (obs < gmin)
    fail(ErrorCode::kOutOfRange, "solve_logit",
         "observation " + std::to_string(obs) + " below the minimum " + std::to_string(gmin) +
             " (inconsistent or multi-update payload)");
  if (obs == gmin) return tc;
  if (obs == 0.0) return 0.0;
  double lo = -1.0;
  while (logit_objective(lo) < obs) lo *= 2.0;
  const double t = bisect_logit(obs, lo, tc);
  if (logit_objective_derivative(t) > 0.0)
    fail(ErrorCode::kPrecondition, "solve_logit", "root is off the decreasing branch");
  return t;
}

std::vector<double> logit_roots(double obs) {
  std::vector<double> roots{solve_logit(obs)};
  const double tc = logit_turning_point();
  if (obs < 0.0 && obs > logit_objective(tc)) {
    double hi = 2.0 * tc;
    while (logit_objective(hi) < obs) hi *= 2.0;
    roots.push_back(bisect_logit(obs, tc, hi));
  }
  return roots;
}

namespace {

struct LastLayer {
  std::size_t layer = 0;
  std::size_t w_begin = 0, w_len = 0;
  std::size_t b_begin = 0;
  bool bias = false;
  std::size_t width = 0, fan_in = 0;
};

LastLayer last_layer(const ModelSpec& spec) {
  const auto layers = parameterized_layers(spec);
  if (layers.empty()) fail(ErrorCode::kPrecondition, "analytic", "model has no parameters");
  const std::size_t L = layers.back();
  const LayerSpec& ls = spec.layers[L];
  if (ls.kind != LayerKind::kLinear)
    fail(ErrorCode::kPrecondition, "analytic", "last parameterized layer must be linear");
  const auto shapes = parameter_shapes(spec)[L];
  LastLayer out;
  out.layer = L;
  out.w_begin = layer_offsets(spec)[L].first;
  out.width = shapes[0][0];
  out.fan_in = shapes[0][1];
  out.w_len = out.width * out.fan_in;
  out.bias = ls.bias;
  out.b_begin = out.w_begin + out.w_len;
  return out;
}

void check_analytic_spec(const ModelSpec& spec) {
  if (spec.num_classes != 1) fail(ErrorCode::kPrecondition, "analytic", "needs a binary-logistic head");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string ctx = "layer " + std::to_string(i);
    if (l.kind != LayerKind::kLinear) fail(ErrorCode::kPrecondition, ctx, "analytic path needs a fully connected net");
    const bool last = i + 1 == spec.layers.size();
    if (last && l.activation != Activation::kNone)
      fail(ErrorCode::kPrecondition, ctx, "output layer must be linear");
    if (l.activation == Activation::kRelu)
      fail(ErrorCode::kPrecondition, ctx, "relu is not invertible");
    if (l.activation == Activation::kLeakyRelu && !(l.slope > 0.0))
      fail(ErrorCode::kPrecondition, ctx, "leaky relu needs a positive slope");
  }
  if (!spec.skip_connections.empty()) fail(ErrorCode::kPrecondition, "analytic", "skip connections unsupported");
}

double inverse_activation(double a, const LayerSpec& l, std::size_t layer) {
  auto bad = [&] {
    fail(ErrorCode::kPrecondition, "layer " + std::to_string(layer),
         "activation value " + std::to_string(a) + " is outside the invertible range");
  };
  switch (l.activation) {
    case Activation::kNone: return a;
    case Activation::kLeakyRelu: return a >= 0.0 ? a : a / l.slope;
    case Activation::kSigmoid:
      if (!(a > 0.0 && a < 1.0)) bad();
      return std::log(a / (1.0 - a));
    case Activation::kTanh:
      if (!(std::abs(a) < 1.0)) bad();
      return std::atanh(a);
    case Activation::kSoftplus:
      if (!(a > 0.0)) bad();
      return a + std::log(-std::expm1(-a));
    case Activation::kRelu: bad();
  }
  return a;
}

}  // namespace

double last_layer_projection(const ModelSpec& spec, const ModelState& state, const Tensor& gradient) {
  const LastLayer ll = last_layer(spec);
  if (ll.width != 1) fail(ErrorCode::kPrecondition, "analytic", "last layer must have one output");
  if (gradient.size() != parameter_count(spec))
    fail(ErrorCode::kShapeMismatch, "analytic", "gradient size differs from the model");
  const auto& p = state.params[ll.layer];
  double s = 0.0;
  for (std::size_t j = 0; j < ll.w_len; ++j) s += gradient[ll.w_begin + j] * p[0][j];
  if (ll.bias) s += gradient[ll.b_begin] * p[1][0];
  return s;
}

Tensor invert_from_logit(const ModelSpec& spec, const ModelState& state, const Tensor& gradient,
                         int label, double t) {
  check_analytic_spec(spec);
  if (label != 1 && label != -1) fail(ErrorCode::kInvalidArgument, "analytic", "label must be +1 or -1");
  const LastLayer ll = last_layer(spec);
  const double dmu = -static_cast<double>(label) * sigmoid_neg(t);  // dl/dmu
  if (std::abs(dmu) < 1e-300) fail(ErrorCode::kSingular, "analytic", "dl/dmu vanishes");

  Eigen::VectorXd a(static_cast<Eigen::Index>(ll.fan_in));
  for (std::size_t j = 0; j < ll.fan_in; ++j) a[static_cast<Eigen::Index>(j)] = gradient[ll.w_begin + j] / dmu;

  for (std::size_t l = ll.layer; l-- > 0;) {
    const LayerSpec& ls = spec.layers[l];
    const Tensor& W = state.params[l][0];
    const auto rows = static_cast<Eigen::Index>(W.dim(0)), cols = static_cast<Eigen::Index>(W.dim(1));
    Eigen::VectorXd rhs(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      double z = inverse_activation(a[r], ls, l);
      if (ls.bias) z -= state.params[l][1][static_cast<std::size_t>(r)];
      rhs[r] = z;
    }
    Eigen::MatrixXd M(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = W[static_cast<std::size_t>(r * cols + c)];
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
    if (qr.rank() < cols)
      fail(ErrorCode::kRankDeficient, "layer " + std::to_string(l),
           "weight has rank " + std::to_string(qr.rank()) + " < " + std::to_string(cols) + " columns");
    a = qr.solve(rhs);
  }
  Shape s{1};
  s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Tensor analytic_invert(const GradientPayload& payload, const ModelSpec& spec,
                       const ModelState& state, int label) {
  if (payload.u_actual != 1)
    fail(ErrorCode::kPrecondition, "analytic_invert",
         "needs a single-update payload, got U=" + std::to_string(payload.u_actual));
  if (payload.training.samples != 1)
    fail(ErrorCode::kPrecondition, "analytic_invert", "needs a single-sample payload");
  check_analytic_spec(spec);
  const Tensor g = target_gradient(payload);
  const double obs = last_layer_projection(spec, state, g);

  // Without a bias both roots can be self-consistent at the last layer;
  // the candidate that reproduces the observed gradient wins.
  std::optional<Error> first_error;
  Tensor best;
  double best_err = std::numeric_limits<double>::infinity();
  for (double t : logit_roots(obs)) {
    try {
      Tensor x = invert_from_logit(spec, state, g, label, t);
      const double err = relative_l2_error(loss_gradient(spec, state, x, {label}).gradient, g);
      if (err < best_err) {
        best_err = err;
        best = std::move(x);
      }
    } catch (const Error& e) {
      if (!first_error) first_error = e;
    }
  }
  if (best.size() == 0) throw *first_error;
  return best;
}

DriftPrediction predict_multiupdate_drift(const ModelSpec& spec, const ModelState& state, int label,
                                          std::span<const Tensor> steps) {
  if (steps.empty()) fail(ErrorCode::kInvalidArgument, "predict_multiupdate_drift", "no step gradients");
  check_analytic_spec(spec);
  DriftPrediction d;
  const double obs0 = last_layer_projection(spec, state, steps[0]);
  d.t_star = solve_logit(obs0);
  double redundant = 0.0;
  Tensor acc = steps[0];
  for (std::size_t u = 1; u < steps.size(); ++u) {
    redundant += last_layer_projection(spec, state, steps[u]);
    acc = acc + steps[u];
  }
  const double e = std::exp(d.t_star);
  const double den = d.t_star * e - e - 1.0;
  if (std::abs(den) < 1e-9) fail(ErrorCode::kSingular, "predict_multiupdate_drift", "denominator vanishes");
  const double drift_t = (e + 1.0) * (e + 1.0) * redundant / den;
  const double y = static_cast<double>(label);
  d.predicted_drift = y * drift_t;
  try {
    d.actual_drift = y * (solve_logit(obs0 + redundant) - d.t_star);
  } catch (const Error&) {
    d.actual_drift = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    const Tensor x_star = invert_from_logit(spec, state, steps[0], label, d.t_star);
    const Tensor x_rec = invert_from_logit(spec, state, acc, label, d.t_star + drift_t);
    d.x_error = relative_l2_error(x_rec, x_star);
  } catch (const Error&) {
    d.x_error = std::numeric_limits<double>::quiet_NaN();
  }
  return d;
}

LabelInference infer_labels(const GradientPayload& payload, const ModelSpec& spec, std::size_t n) {
  if (n == 0) fail(ErrorCode::kInvalidArgument, "infer_labels", "empty batch");
  const Tensor g = target_gradient(payload);
  if (g.size() != parameter_count(spec)) fail(ErrorCode::kShapeMismatch, "infer_labels", "payload size differs from the model");
  if (l2_norm(g) == 0.0) fail(ErrorCode::kInvalidArgument, "infer_labels", "zero gradient carries no labels");
  const LastLayer ll = last_layer(spec);
  LabelInference out;
  out.best_effort = n > 1 || payload.u_actual > 1;

  // Per-row score: the bias gradient when there is one (exact for one
  // sample), else the row sum, which needs non-negative features.
  std::vector<double> score(ll.width, 0.0);
  std::vector<bool> has_negative(ll.width, false);
  for (std::size_t c = 0; c < ll.width; ++c) {
    for (std::size_t j = 0; j < ll.fan_in; ++j) {
      const double v = g[ll.w_begin + c * ll.fan_in + j];
      score[c] += v;
      if (v < 0.0) has_negative[c] = true;
    }
    if (ll.bias) score[c] = g[ll.b_begin + c];
  }

  if (ll.width == 1) {
    // dl/dmu = -y sigmoid(-y mu) has the sign of -y.
    const int y = score[0] < 0.0 ? 1 : -1;
    out.labels.assign(n, y);
    out.present = {y == -1, y == 1};
    return out;
  }
  const auto argmin = static_cast<int>(std::min_element(score.begin(), score.end()) - score.begin());
  out.present.assign(ll.width, false);
  if (n == 1) {
    out.labels = {argmin};
    out.present[static_cast<std::size_t>(argmin)] = true;
    return out;
  }
  std::vector<int> classes;
  for (std::size_t c = 0; c < ll.width; ++c)
    if (has_negative[c] || score[c] < 0.0) classes.push_back(static_cast<int>(c));
  std::stable_sort(classes.begin(), classes.end(),
                   [&](int a, int b) { return score[static_cast<std::size_t>(a)] < score[static_cast<std::size_t>(b)]; });
  if (classes.size() > n) classes.resize(n);
  for (int c : classes) out.present[static_cast<std::size_t>(c)] = true;
  out.labels = classes;
  while (out.labels.size() < n) out.labels.push_back(classes.empty() ? argmin : classes.front());
  return out;
}

std::string to_json(const AttackResult& r, const AttackConfig& c) {
  nlohmann::json j;
  j["config"] = {{"kind", to_string(c.kind)},
                 {"distance", to_string(c.distance)},
                 {"tv_weight", c.tv_weight},
                 {"iterations", c.iterations},
                 {"optimizer", c.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
                 {"step_size", c.step_size},
                 {"step_decay", c.step_decay},
                 {"restarts", c.restarts},
                 {"labels_known", c.labels_known},
                 {"adversary_case", to_string(c.adversary_case)},
                 {"layer_subset", c.layer_subset}};
  j["seed"] = r.seed;
  j["restart"] = r.restart;
  j["labels"] = r.labels;
  j["final_loss"] = r.loss_trace.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.loss_trace.back());
  j["trace_length"] = r.loss_trace.size();
  j["wallclock_seconds"] = r.wallclock_seconds;
  j["shape"] = r.reconstructed.shape();
  j["metrics"] = r.metrics ? nlohmann::json::parse(to_json(*r.metrics)) : nlohmann::json(nullptr);
  return j.dump();
}

}  // namespace gleak
