#ifndef HYPERCL_NN_HPP_
#define HYPERCL_NN_HPP_

#include "hypercl/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

namespace hypercl::nn {

/// y[i][j] = sum_k x[i][k] * W[k][j] + b[j]
template <class Scalar>
MatX<Scalar> affine_forward(const MatX<Scalar>& x, const MatX<Scalar>& W,
                            const VecX<Scalar>& b) {
  if (x.cols() != W.rows() || W.cols() != b.size())
    throw DimensionError("affine_forward: shape mismatch");
  return (x * W).rowwise() + b.transpose();
}

/// Elementwise max(0, x); works on any dense expression.
template <class Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0));
}

/// Mean cross-entropy over rows of `logits` plus the exact gradient
/// d(loss)/d(logits). Stabilized by rowwise max subtraction.
template <class Scalar>
std::pair<Scalar, MatX<Scalar>> softmax_cross_entropy(
    const MatX<Scalar>& logits, const std::vector<int>& labels) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  if (static_cast<Index>(labels.size()) != n)
    throw DimensionError("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= c)
      throw ValidationError("softmax_cross_entropy: label out of range");

  MatX<Scalar> grad(n, c);
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    VecX<Scalar> shifted = logits.row(i).transpose().array() - mx;
    VecX<Scalar> ex = shifted.array().exp();
    const Scalar z = ex.sum();
    loss += std::log(z) - shifted(labels[static_cast<std::size_t>(i)]);
    grad.row(i) = (ex / z).transpose();
    grad(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
  }
  loss /= static_cast<Scalar>(n);
  grad /= static_cast<Scalar>(n);
  return {loss, std::move(grad)};
}

/// Squared L2 norm of (a - b). Sum over coordinates, not element-mean.
template <class Scalar>
Scalar mse_to_target(const VecX<Scalar>& a, const VecX<Scalar>& b) {
  if (a.size() != b.size()) throw DimensionError("mse_to_target: length mismatch");
  return (a - b).squaredNorm();
}

struct AdamState {
  Vector m;
  Vector v;
  long t = 0;
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;

  AdamState() = default;
  explicit AdamState(Index n, Real lr_ = 1e-3)
      : m(Vector::Zero(n)), v(Vector::Zero(n)), lr(lr_) {}
};

/// Bias-corrected Adam update, in place. Deterministic given inputs.
inline void adam_step(AdamState& s, Eigen::Ref<Vector> params,
                      const Eigen::Ref<const Vector>& grads) {
  if (params.size() != grads.size() || s.m.size() != params.size() ||
      s.v.size() != params.size())
    throw DimensionError("adam_step: length mismatch");
  if (!grads.allFinite())
    throw ValidationError("adam_step: non-finite gradient");
  s.t += 1;
  s.m = s.beta1 * s.m + (1 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1 - s.beta2) * grads.cwiseProduct(grads);
  const Real c1 = 1 - std::pow(s.beta1, static_cast<Real>(s.t));
  const Real c2 = 1 - std::pow(s.beta2, static_cast<Real>(s.t));
  params -= (s.lr / c1) * s.m.cwiseQuotient(((s.v / c2).cwiseSqrt().array() + s.eps).matrix());
}

using LossWithGrad = std::function<std::pair<Real, Vector>(const Vector&)>;

/// Central finite-difference check of an analytic gradient.
/// Returns the max per-coordinate error |g - g_fd| / max(1, |g| + |g_fd|),
/// i.e. relative above unit scale and absolute below it.
inline Real grad_check(const LossWithGrad& f, const Vector& params, Real eps) {
  if (eps <= 0) throw ValidationError("grad_check: eps must be positive");
  const Vector analytic = f(params).second;
  if (analytic.size() != params.size())
    throw DimensionError("grad_check: gradient length mismatch");
  Real worst = 0;
  Vector p = params;
  for (Index i = 0; i < p.size(); ++i) {
    const Real saved = p(i);
    p(i) = saved + eps;
    const Real up = f(p).first;
    p(i) = saved - eps;
    const Real down = f(p).first;
    p(i) = saved;
    const Real fd = (up - down) / (2 * eps);
    const Real err = std::abs(analytic(i) - fd) /
                     std::max(Real(1), std::abs(analytic(i)) + std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace hypercl::nn

#endif  // HYPERCL_NN_HPP_
