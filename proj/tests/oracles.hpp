#pragma once
// Independent reference computations shared by the unit tests and the
// acceptance runner. Nothing here calls into the library's kernel code.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Matrix exponential by scaling and squaring of a Taylor series.
inline Mat expm(const Mat& a) {
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  if (norm > 0.1) s = static_cast<int>(std::ceil(std::log2(norm / 0.1)));
  const Mat b = a / std::ldexp(1.0, s);
  Mat term = Mat::Identity(a.rows(), a.cols());
  Mat sum = term;
  for (int k = 1; k < 30; ++k) {
    term = (term * b / static_cast<double>(k)).eval();
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = (sum * sum).eval();
  return sum;
}

/// Drift and diffusion of the state (x, v): dU = F U dt + G dW.
inline void rcvm_system(double tau, double nu, double omega, Mat& f, Mat& g) {
  f = Mat::Zero(4, 4);
  f(0, 2) = f(1, 3) = 1.0;
  f(2, 2) = f(3, 3) = -1.0 / tau;
  f(2, 3) = omega;
  f(3, 2) = -omega;
  const double sigma = 2.0 * nu / std::sqrt(std::numbers::pi * tau);
  g = Mat::Zero(4, 2);
  g(2, 0) = g(3, 1) = sigma;
}

/// Van Loan: expm([[-F, G G'], [0, F']] dt) yields T = e^{F dt} and the
/// transition covariance Q = T * (upper-right block).
inline void van_loan(double tau, double nu, double omega, double dt, Mat& t, Mat& q) {
  Mat f, g;
  rcvm_system(tau, nu, omega, f, g);
  Mat m = Mat::Zero(8, 8);
  m.topLeftCorner(4, 4) = -f;
  m.topRightCorner(4, 4) = g * g.transpose();
  m.bottomRightCorner(4, 4) = f.transpose();
  const Mat e = expm(m * dt);
  t = e.bottomRightCorner(4, 4).transpose();
  q = t * e.topRightCorner(4, 4);
  q = 0.5 * (q + q.transpose()).eval();
}

/// Closed forms of the covariance entries exactly as printed, direct evaluation.
struct CovEntries {
  double q1, q2, g1, g2;
};

inline CovEntries closed_form(double tau, double nu, double omega, double dt) {
  const double sigma2 = 4.0 * nu * nu / (std::numbers::pi * tau);
  const double c = 1.0 / (tau * tau) + omega * omega;
  const double e1 = std::exp(-dt / tau);
  const double e2 = std::exp(-2.0 * dt / tau);
  const double wd = omega * dt;
  CovEntries r;
  r.q1 = sigma2 / c *
         (dt - 2.0 * (omega * std::sin(wd) - std::cos(wd) / tau) * e1 / c +
          tau / 2.0 * ((omega * omega - 3.0 / (tau * tau)) / c - e2));
  r.q2 = 2.0 * nu * nu / std::numbers::pi * (1.0 - e2);
  r.g1 = sigma2 / (2.0 * c) * (1.0 + e2 - 2.0 * e1 * std::cos(wd));
  r.g2 = sigma2 / c * (e1 * std::sin(wd) - omega * tau / 2.0 * (1.0 - e2));
  return r;
}

/// omega = 0 reduction (integrated Ornstein-Uhlenbeck), long double.
struct JohnsonEntries {
  long double q1, g1;
};

inline JohnsonEntries johnson(long double tau, long double nu, long double dt) {
  const long double pi = 3.141592653589793238462643383279502884L;
  const long double sigma2 = 4.0L * nu * nu / (pi * tau);
  const long double beta = 1.0L / tau;
  const long double e1 = std::exp(-beta * dt);
  const long double e2 = std::exp(-2.0L * beta * dt);
  JohnsonEntries r;
  r.q1 = sigma2 / (beta * beta) * (dt - 2.0L * (1.0L - e1) / beta + (1.0L - e2) / (2.0L * beta));
  r.g1 = sigma2 / (2.0L * beta * beta) * (1.0L - e1) * (1.0L - e1);
  return r;
}

/// Euler-Maruyama moments of U(dt) from U(0) = u0 over `paths` paths.
struct MomentEstimate {
  Vec mean;
  Mat cov;
  Mat cov_se;  // standard error of each covariance entry
  Vec mean_se;
};

/// Piecewise-constant omega: segment l lasts dts[l] with angular velocity omegas[l].
template <class Rng>
MomentEstimate euler_moments(double tau, double nu, const std::vector<double>& dts,
                             const std::vector<double>& omegas, const Vec& u0, int paths, double step,
                             Rng& rng) {
  const double sigma = 2.0 * nu / std::sqrt(std::numbers::pi * tau);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::Vector4d> finals(static_cast<std::size_t>(paths));
  for (int p = 0; p < paths; ++p) {
    double x = u0[0], y = u0[1], vx = u0[2], vy = u0[3];
    for (std::size_t l = 0; l < dts.size(); ++l) {
      const int n_steps = static_cast<int>(std::llround(dts[l] / step));
      const double h = dts[l] / n_steps;
      const double sq = sigma * std::sqrt(h);
      const double omega = omegas[l];
      for (int k = 0; k < n_steps; ++k) {
        const double ax = -vx / tau + omega * vy;
        const double ay = -vy / tau - omega * vx;
        x += vx * h;
        y += vy * h;
        vx += ax * h + sq * normal(rng);
        vy += ay * h + sq * normal(rng);
      }
    }
    finals[static_cast<std::size_t>(p)] = Eigen::Vector4d(x, y, vx, vy);
  }
  MomentEstimate m;
  m.mean = Vec::Zero(4);
  for (const auto& f : finals) m.mean += f;
  m.mean /= paths;
  m.cov = Mat::Zero(4, 4);
  Mat fourth = Mat::Zero(4, 4);
  for (const auto& f : finals) {
    const Eigen::Vector4d d = f - m.mean;
    m.cov += d * d.transpose();
  }
  m.cov /= (paths - 1);
  for (const auto& f : finals) {
    const Eigen::Vector4d d = f - m.mean;
    const Mat prod = d * d.transpose() - m.cov;
    fourth += prod.cwiseProduct(prod);
  }
  m.cov_se = (fourth / (paths - 1) / paths).cwiseSqrt();
  m.mean_se = (m.cov.diagonal() / paths).cwiseSqrt();
  return m;
}

template <class Rng>
MomentEstimate euler_moments(double tau, double nu, double omega, double dt, const Vec& u0,
                             int paths, double step, Rng& rng) {
  return euler_moments(tau, nu, std::vector<double>{dt}, std::vector<double>{omega}, u0, paths, step,
                       rng);
}

/// Log-density of y under N(mean, cov).
inline double gaussian_logpdf(const Vec& y, const Vec& mean, const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  const Mat l = llt.matrixL();
  const Vec d = y - mean;
  const Vec z = l.triangularView<Eigen::Lower>().solve(d);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  return -0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) - 0.5 * logdet -
         0.5 * z.squaredNorm();
}

/// Gauss-Hermite nodes/weights for int e^{-x^2} f(x) dx (Golub-Welsch).
inline void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Mat j = Mat::Zero(n, n);
  for (int i = 1; i < n; ++i) j(i, i - 1) = j(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(j);
  nodes.resize(static_cast<std::size_t>(n));
  weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nodes[static_cast<std::size_t>(i)] = es.eigenvalues()[i];
    const double v0 = es.eigenvectors()(0, i);
    weights[static_cast<std::size_t>(i)] = std::sqrt(std::numbers::pi) * v0 * v0;
  }
}

/// Joint Gaussian of the stacked states (U_1..U_n) for U_1 ~ N(m0, p0) and
/// U_{j+1} = T_j U_j + w_j, w_j ~ N(0, Q_j), built by unrolling.
struct JointStates {
  Vec mean;  // 4n
  Mat cov;   // 4n x 4n
};

inline JointStates unroll_states(const std::vector<Mat>& ts, const std::vector<Mat>& qs, const Vec& m0,
                                 const Mat& p0) {
  const int n = static_cast<int>(ts.size()) + 1;
  // U_j = Phi(j,0) U_1 + sum_{l<j} Phi(j,l+1) w_l, Phi(j,l) = T_{j-1} ... T_l
  auto phi = [&](int j, int l) {
    Mat m = Mat::Identity(4, 4);
    for (int k = l; k < j; ++k) m = (ts[static_cast<std::size_t>(k)] * m).eval();
    return m;
  };
  JointStates js;
  js.mean = Vec::Zero(4 * n);
  js.cov = Mat::Zero(4 * n, 4 * n);
  for (int j = 0; j < n; ++j) {
    js.mean.segment(4 * j, 4) = phi(j, 0) * m0;
    for (int k = 0; k < n; ++k) {
      Mat c = phi(j, 0) * p0 * phi(k, 0).transpose();
      for (int l = 0; l < std::min(j, k); ++l) {
        c += phi(j, l + 1) * qs[static_cast<std::size_t>(l)] * phi(k, l + 1).transpose();
      }
      js.cov.block(4 * j, 4 * k, 4, 4) = c;
    }
  }
  return js;
}

/// Positions-only observation of the stacked states plus N(0, r I) noise.
inline void observe_positions(const JointStates& js, double r, Vec& mean, Mat& cov, Mat& cross) {
  const int n = static_cast<int>(js.mean.size()) / 4;
  Mat z = Mat::Zero(2 * n, 4 * n);
  for (int j = 0; j < n; ++j) {
    z(2 * j, 4 * j) = 1.0;
    z(2 * j + 1, 4 * j + 1) = 1.0;
  }
  mean = z * js.mean;
  cov = z * js.cov * z.transpose() + r * Mat::Identity(2 * n, 2 * n);
  cross = js.cov * z.transpose();
}

}  // namespace oracle
