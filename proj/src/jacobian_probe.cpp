// Copyright 2026 The gleak Authors
// SPDX-License-Identifier: Apache-2.0

#include "gleak/jacobian_probe.hpp"

#include <Eigen/SVD>

#include "gleak/error.hpp"

namespace gleak {

Tensor gradient_jacobian(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                         const Labels& labels, double h) {
  if (!(h > 0.0)) fail(ErrorCode::kInvalidArgument, "gradient_jacobian", "step must be positive");
  const std::size_t p = parameter_count(spec), n = x.size();
  Tensor jac({p, n});
  Tensor xp = x;
  for (std::size_t i = 0; i < n; ++i) {
    xp[i] = x[i] + h;
    const Tensor up = loss_gradient(spec, state, xp, labels).gradient;
    xp[i] = x[i] - h;
    const Tensor down = loss_gradient(spec, state, xp, labels).gradient;
    xp[i] = x[i];
    for (std::size_t r = 0; r < p; ++r) jac[r * n + i] = (up[r] - down[r]) / (2.0 * h);
  }
  return jac;
}

JacobianProbe probe_jacobian(const ModelSpec& spec, const ModelState& state, const Tensor& x,
                             const Labels& labels, const JacobianProbeConfig& c) {
  if (!(c.epsilon > 0.0) || !(c.rank_tol > 0.0))
    fail(ErrorCode::kInvalidArgument, "probe_jacobian", "epsilon and rank_tol must be positive");
  const Tensor jac = gradient_jacobian(spec, state, x, labels, c.fd_step);
  const std::size_t p = jac.dim(0), n = jac.dim(1);
  Eigen::MatrixXd m(p, n);
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t i = 0; i < n; ++i) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = jac[r * n + i];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);

  JacobianProbe out;
  out.parameters = p;
  out.input_dim = n;
  const auto& sv = svd.singularValues();
  out.singular_values.assign(sv.data(), sv.data() + sv.size());
  const double top = out.singular_values.empty() ? 0.0 : out.singular_values.front();
  for (double s : out.singular_values) out.numerical_rank += s > c.rank_tol * top;

  // With p < n the trailing columns of V span the null space; otherwise the
  // last one belongs to the smallest singular value.
  const Eigen::VectorXd v = svd.matrixV().col(static_cast<Eigen::Index>(n - 1));
  out.direction = Tensor(x.shape());
  for (std::size_t i = 0; i < n; ++i) out.direction[i] = v(static_cast<Eigen::Index>(i));

  const Tensor base = loss_gradient(spec, state, x, labels).gradient;
  const Tensor moved = loss_gradient(spec, state, x + c.epsilon * out.direction, labels).gradient;
  const double norm = l2_norm(base);
  if (norm == 0.0) fail(ErrorCode::kPrecondition, "probe_jacobian", "gradient is zero at the probe");
  out.relative_change = l2_norm(moved - base) / norm;
  return out;
}

}  // namespace gleak
