#include "ccvm/kernel.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <complex>
#include <numbers>

#include "ccvm/errors.hpp"

namespace ccvm::kernel {
namespace {

using cd = std::complex<double>;

constexpr int kSeriesTerms = 40;
constexpr double kSeriesRadius = 1.0;

// e^z - 1 without cancellation for small |z|.
cd cexpm1(cd z) {
  const double a = z.real();
  const double b = z.imag();
  const double s = std::sin(0.5 * b);
  return {std::expm1(a) * std::cos(b) - 2.0 * s * s, std::exp(a) * std::sin(b)};
}

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// phi_k(z) = sum_{n>=0} z^n / (n+k)!, i.e. phi_1 = (e^z-1)/z, phi_2 = (e^z-1-z)/z^2.
cd phi(int k, cd z) {
  if (std::abs(z) < kSeriesRadius) {
    cd term = 1.0 / factorial(k);
    cd sum = term;
    for (int n = 1; n < kSeriesTerms; ++n) {
      term *= z / static_cast<double>(n + k);
      sum += term;
      if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  const cd p1 = cexpm1(z) / z;
  return k == 1 ? p1 : (p1 - 1.0) / z;
}

// Divided difference (phi_k(z) - phi_k(w)) / (z - w), series form near 0.
cd phi_divided(int k, cd z, cd w) {
  if (std::max(std::abs(z), std::abs(w)) < kSeriesRadius) {
    // sum_{n>=1} h_{n-1}(z, w) / (n+k)!, h_m = sum_{i=0}^m z^i w^{m-i}
    cd h = 1.0;
    cd wpow = 1.0;
    double inv_fact = 1.0 / factorial(k + 1);
    cd sum = h * inv_fact;
    for (int n = 2; n < kSeriesTerms; ++n) {
      wpow *= w;
      h = z * h + wpow;
      inv_fact /= static_cast<double>(n + k);
      const cd term = h * inv_fact;
      sum += term;
      if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  return (phi(k, z) - phi(k, w)) / (z - w);
}

// a + ib  <->  [[a, b], [-b, a]]; products of such matrices follow complex products.
Mat2 as_matrix(cd c) {
  Mat2 m;
  m << c.real(), c.imag(), -c.imag(), c.real();
  return m;
}

void symmetrize(Mat4& m) { m = 0.5 * (m + m.transpose()).eval(); }

}  // namespace

double RcvmParams::sigma() const { return 2.0 * nu / std::sqrt(std::numbers::pi * tau); }

double RcvmParams::c() const { return 1.0 / (tau * tau) + omega * omega; }

void RcvmParams::validate() const {
  if (!(std::isfinite(tau) && tau > 0.0)) throw InputError("tau must be finite and > 0");
  if (!(std::isfinite(nu) && nu > 0.0)) throw InputError("nu must be finite and > 0");
  if (!std::isfinite(omega)) throw InputError("omega must be finite");
  if (!mu.allFinite()) throw InputError("mu must be finite");
}

Mat2 exp_neg_A(const RcvmParams& p, double dt) {
  if (!(dt >= 0.0)) throw InputError("dt must be >= 0");
  return as_matrix(std::exp(cd(-dt / p.tau, p.omega * dt)));
}

TransitionKernel transition_kernel(const RcvmParams& p, double dt) {
  p.validate();
  if (!(std::isfinite(dt) && dt >= 0.0)) throw InputError("dt must be finite and >= 0");

  // Complex form of the 2x2 blocks: A <-> kappa = 1/tau - i omega, e^{-A dt} <-> e^z.
  const double x = dt / p.tau;
  const cd kappa(1.0 / p.tau, -p.omega);
  const cd z(-x, p.omega * dt);
  const cd w(-2.0 * x, 0.0);
  const double sigma2 = p.sigma() * p.sigma();

  TransitionKernel k;
  k.dt = dt;
  const Mat2 e = as_matrix(std::exp(z));
  const Mat2 s = as_matrix(dt * phi(1, z));                    // A^{-1}(I - e^{-A dt})
  const Mat2 b_pos = as_matrix(kappa * dt * dt * phi(2, z));   // dt I - A^{-1}(I - e^{-A dt})
  const Mat2 b_vel = as_matrix(kappa * dt * phi(1, z));        // I - e^{-A dt}

  k.T.setIdentity();
  k.T.block<2, 2>(0, 2) = s;
  k.T.block<2, 2>(2, 2) = e;
  k.B.block<2, 2>(0, 0) = b_pos;
  k.B.block<2, 2>(2, 0) = b_vel;

  // q1 = sigma^2/C int_0^dt |1 - e^{-kappa r}|^2 dr, Gamma = sigma^2 int_0^dt A^{-1}(I-e^{-Ar})e^{-A'r} dr.
  k.q1 = 2.0 * sigma2 * dt * dt * dt * phi_divided(2, z, w).real();
  k.q2 = 2.0 * p.nu * p.nu / std::numbers::pi * -std::expm1(-2.0 * x);
  const cd gamma = sigma2 * dt * dt * phi_divided(1, std::conj(z), w);
  k.gamma1 = gamma.real();
  k.gamma2 = gamma.imag();

  k.Q.setZero();
  k.Q(0, 0) = k.Q(1, 1) = k.q1;
  k.Q(2, 2) = k.Q(3, 3) = k.q2;
  k.Q.block<2, 2>(0, 2) = as_matrix(gamma);
  k.Q.block<2, 2>(2, 0) = as_matrix(gamma).transpose();
  symmetrize(k.Q);
  return k;
}

CompositeKernel compose(std::span<const KernelStep> segments) {
  if (segments.empty()) throw InputError("compose needs at least one segment");
  CompositeKernel out;
  for (const auto& seg : segments) {
    if (!seg.params.mu.isZero(0.0)) throw InputError("compose is defined for mu = 0 only");
    if (!(seg.dt > 0.0)) throw InputError("compose segments need dt > 0");
    const TransitionKernel k = transition_kernel(seg.params, seg.dt);
    out.T = (k.T * out.T).eval();
    out.Q = (k.T * out.Q * k.T.transpose()).eval() + k.Q;
    symmetrize(out.Q);
    out.total_dt += seg.dt;
    ++out.steps;
  }
  return out;
}

CompositeKernel compose(double tau, double nu, std::span<const double> dts,
                        std::span<const double> omegas) {
  if (dts.empty()) throw InputError("compose needs at least one segment");
  if (dts.size() != omegas.size()) throw InputError("compose: dts and omegas differ in length");
  CompositeKernel out;
  for (std::size_t l = 0; l < dts.size(); ++l) {
    if (!(dts[l] > 0.0)) throw InputError("compose segments need dt > 0");
    const TransitionKernel k = transition_kernel(RcvmParams{tau, nu, omegas[l]}, dts[l]);
    if (l == 0) {
      out.T = k.T;
      out.Q = k.Q;
    } else {
      out.T = (k.T * out.T).eval();
      out.Q = (k.T * out.Q * k.T.transpose()).eval() + k.Q;
      symmetrize(out.Q);
    }
    out.total_dt += dts[l];
    ++out.steps;
  }
  return out;
}

Vec4 sample_gaussian(const Vec4& mean, const Mat4& cov, Rng& rng) {
  if (cov.isZero(0.0)) return mean;
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec4 z;
  for (int i = 0; i < 4; ++i) z[i] = normal(rng);
  for (double jitter : {1e-12, 1e-10, 1e-8}) {
    Eigen::LLT<Mat4> llt(cov + jitter * Mat4::Identity());
    if (llt.info() == Eigen::Success) return mean + llt.matrixL() * z;
  }
  throw NumericalError("transition covariance is not factorizable (ill-conditioned kernel)");
}

Vec4 sample_transition(const TransitionKernel& k, const Vec4& state, const Vec2& mu, Rng& rng) {
  if (!state.allFinite()) throw InputError("state must be finite");
  return sample_gaussian(k.T * state + k.B * mu, k.Q, rng);
}

Vec4 sample_transition(const CompositeKernel& k, const Vec4& state, Rng& rng) {
  if (!state.allFinite()) throw InputError("state must be finite");
  return sample_gaussian(k.T * state, k.Q, rng);
}

}  // namespace ccvm::kernel
