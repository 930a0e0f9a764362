#pragma once

#include <Eigen/Core>
#include <span>

#include "ccvm/random.hpp"
#include "ccvm/track.hpp"

namespace ccvm::kernel {

using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;
using Mat42 = Eigen::Matrix<double, 4, 2>;
using Vec4 = Eigen::Vector4d;

/// Rotational correlated velocity model
///   dX = V dt,  dV = -A (V - mu) dt + sigma dW,
///   A = [[1/tau, -omega], [omega, 1/tau]],  sigma = 2 nu / sqrt(pi tau).
struct RcvmParams {
  double tau = 1.0;    // h, velocity persistence
  double nu = 1.0;     // km/h, velocity scale
  double omega = 0.0;  // rad/h, angular velocity
  Vec2 mu = Vec2::Zero();

  double sigma() const;
  /// 1/tau^2 + omega^2
  double c() const;
  /// Throws InputError for non-positive or non-finite tau/nu, non-finite omega/mu.
  void validate() const;
};

/// Exact Gaussian transition U(t+dt) | U(t)=u ~ N(T u + B mu, Q) of the
/// state U = (X1, X2, V1, V2).
struct TransitionKernel {
  Mat4 T = Mat4::Identity();
  Mat42 B = Mat42::Zero();
  Mat4 Q = Mat4::Zero();
  double dt = 0.0;
  double q1 = 0.0;
  double q2 = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
};

/// Product of zero-mean kernels over consecutive sub-steps.
struct CompositeKernel {
  Mat4 T = Mat4::Identity();
  Mat4 Q = Mat4::Zero();
  double total_dt = 0.0;
  std::size_t steps = 0;
};

struct KernelStep {
  RcvmParams params;
  double dt = 0.0;
};

/// e^{-A dt} = e^{-dt/tau} [[cos w dt, sin w dt], [-sin w dt, cos w dt]].
Mat2 exp_neg_A(const RcvmParams& p, double dt);

/// Closed-form kernel. Evaluated through exponential divided differences so
/// that small tau/omega*dt regimes keep full relative precision.
TransitionKernel transition_kernel(const RcvmParams& p, double dt);

/// T = T_{k-1} ... T_0 and Q_k = T_{k-1} Q_{k-1} T_{k-1}' + Q_{k-1},
/// symmetrized at every step. Every segment must have mu = 0.
CompositeKernel compose(std::span<const KernelStep> segments);

/// Same recursion for a common (tau, nu) and per-sub-step omega.
CompositeKernel compose(double tau, double nu, std::span<const double> dts,
                        std::span<const double> omegas);

/// Draw from N(mean, cov) through a Cholesky factor of cov + jitter I, with
/// jitter 1e-12, escalated to 1e-10 and 1e-8. An exactly zero cov returns the
/// mean. Throws NumericalError when no factorization succeeds.
Vec4 sample_gaussian(const Vec4& mean, const Mat4& cov, Rng& rng);

Vec4 sample_transition(const TransitionKernel& k, const Vec4& state, const Vec2& mu, Rng& rng);
Vec4 sample_transition(const CompositeKernel& k, const Vec4& state, Rng& rng);

}  // namespace ccvm::kernel
