#include "ccvm/ssm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <numbers>

#include "ccvm/errors.hpp"
#include "ccvm/io.hpp"

namespace ccvm::ssm {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void symmetrize(Mat4& m) { m = 0.5 * (m + m.transpose()).eval(); }

template <bool Store>
double filter(std::span<const CompositeKernel> kernels, const Track& track,
              const MeasurementModel& mm, const InitialState& init, KalmanResult* out) {
  mm.validate();
  const std::size_t n = track.size();
  if (n == 0) throw InputError("track " + track.id + " has no observations");
  if (kernels.size() + 1 != n) {
    throw InputError("need one kernel per observation interval for track " + track.id);
  }
  const double r = mm.sigma_obs * mm.sigma_obs;
  std::vector<double> terms(n);
  if constexpr (Store) {
    out->predicted_means.resize(n);
    out->predicted_covs.resize(n);
    out->filtered_means.resize(n);
    out->filtered_covs.resize(n);
    out->innovations.resize(n);
    out->innovation_covs.resize(n);
  }

  Vec4 m = init.mean;
  Mat4 p = init.cov;
  for (std::size_t j = 0; j < n; ++j) {
    if (j > 0) {
      const auto& k = kernels[j - 1];
      m = k.T * m;
      p = k.T * p * k.T.transpose() + k.Q;
      symmetrize(p);
    }
    if constexpr (Store) {
      out->predicted_means[j] = m;
      out->predicted_covs[j] = p;
    }
    const Vec2 e = track.observations[j] - m.head<2>();
    Mat2 s = p.topLeftCorner<2, 2>();
    s(0, 0) += r;
    s(1, 1) += r;
    s = 0.5 * (s + s.transpose()).eval();
    Eigen::LLT<Mat2> llt(s);
    if (llt.info() != Eigen::Success || !(s.determinant() > 0.0)) {
      throw NumericalError("innovation covariance not positive definite (track " + track.id +
                           ", observation " + std::to_string(j) + ")");
    }
    const Mat2 l = llt.matrixL();
    const double logdet = 2.0 * (std::log(l(0, 0)) + std::log(l(1, 1)));
    const Vec2 se = llt.solve(e);
    terms[j] = -kLog2Pi - 0.5 * logdet - 0.5 * e.dot(se);

    // K = P Z' S^-1; Joseph-form covariance update keeps P PSD.
    const Eigen::Matrix<double, 4, 2> pz = p.leftCols<2>();
    const Eigen::Matrix<double, 4, 2> gain = llt.solve(pz.transpose()).transpose();
    m += gain * e;
    Mat4 ikz = Mat4::Identity();
    ikz.leftCols<2>() -= gain;
    p = ikz * p * ikz.transpose() + r * gain * gain.transpose();
    symmetrize(p);
    if constexpr (Store) {
      out->filtered_means[j] = m;
      out->filtered_covs[j] = p;
      out->innovations[j] = e;
      out->innovation_covs[j] = s;
    }
  }
  const double total = pairwise_sum(terms);
  if (!std::isfinite(total)) throw NumericalError("non-finite log-likelihood for track " + track.id);
  if constexpr (Store) {
    out->loglik = total;
    out->loglik_terms = std::move(terms);
  }
  return total;
}

}  // namespace

Mat24 MeasurementModel::Z() {
  Mat24 z = Mat24::Zero();
  z(0, 0) = 1.0;
  z(1, 1) = 1.0;
  return z;
}

void MeasurementModel::validate() const {
  if (!(std::isfinite(sigma_obs) && sigma_obs >= 0.0)) throw InputError("sigma_obs must be >= 0");
}

InitialState default_initial_state(const Track& track, double sigma_obs, double nu) {
  if (track.size() == 0) throw InputError("track " + track.id + " has no observations");
  InitialState s;
  s.mean << track.observations[0], 0.0, 0.0;
  s.cov.setZero();
  s.cov(0, 0) = s.cov(1, 1) = sigma_obs * sigma_obs;
  s.cov(2, 2) = s.cov(3, 3) = 2.0 * nu * nu / std::numbers::pi;
  return s;
}

std::vector<CompositeKernel> build_state_space(const Track& track, const ParamFn& tau_fn,
                                               const ParamFn& nu_fn, const OmegaFn& omega) {
  const std::size_t n = track.size();
  std::vector<CompositeKernel> out;
  if (n < 2) return out;
  if (omega && track.grids.size() != n - 1) {
    throw InputError("track " + track.id + " has no covariate grid for every interval");
  }
  out.reserve(n - 1);
  std::vector<double> dts;
  std::vector<double> omegas;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double tau = tau_fn(track, j);
    const double nu = nu_fn(track, j);
    if (!(tau > 0.0) || !(nu > 0.0) || !std::isfinite(tau) || !std::isfinite(nu)) {
      throw InputError("tau and nu must be positive (track " + track.id + ")");
    }
    dts.clear();
    omegas.clear();
    if (omega) {
      const IntervalGrid& g = track.grids[j];
      if (g.times.size() < 2 || g.d_shore.size() != g.times.size() || g.theta.size() != g.times.size()) {
        throw InputError("malformed covariate grid on track " + track.id);
      }
      for (std::size_t l = 0; l + 1 < g.times.size(); ++l) {
        dts.push_back(g.times[l + 1] - g.times[l]);
        omegas.push_back(omega(g.theta[l], g.d_shore[l]));
      }
    } else {
      dts.push_back(track.times[j + 1] - track.times[j]);
      omegas.push_back(0.0);
    }
    out.push_back(kernel::compose(tau, nu, dts, omegas));
  }
  return out;
}

KalmanResult kalman_loglik(std::span<const CompositeKernel> kernels, const Track& track,
                           const MeasurementModel& mm, const InitialState& init) {
  KalmanResult res;
  filter<true>(kernels, track, mm, init, &res);
  return res;
}

double kalman_loglik_value(std::span<const CompositeKernel> kernels, const Track& track,
                           const MeasurementModel& mm, const InitialState& init) {
  return filter<false>(kernels, track, mm, init, nullptr);
}

SmoothedStates rts_smoother(const KalmanResult& result, std::span<const CompositeKernel> kernels) {
  const std::size_t n = result.filtered_means.size();
  SmoothedStates out;
  out.means.resize(n);
  out.covs.resize(n);
  if (n == 0) return out;
  out.means[n - 1] = result.filtered_means[n - 1];
  out.covs[n - 1] = result.filtered_covs[n - 1];
  for (std::size_t j = n - 1; j-- > 0;) {
    const Mat4& pf = result.filtered_covs[j];
    const Mat4& pp = result.predicted_covs[j + 1];
    const Mat4& t = kernels[j].T;
    // G = Pf T' Pp^-1
    const Mat4 g = pp.ldlt().solve(t * pf).transpose();
    out.means[j] = result.filtered_means[j] + g * (out.means[j + 1] - result.predicted_means[j + 1]);
    Mat4 c = pf + g * (out.covs[j + 1] - pp) * g.transpose();
    symmetrize(c);
    out.covs[j] = c;
  }
  return out;
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

void write_states(const std::string& path, const std::vector<StateRows>& tracks) {
  io::CsvTable table;
  table.header = {"id", "t", "x_hat", "y_hat", "vx_hat", "vy_hat", "var_x", "var_y"};
  for (const auto& tr : tracks) {
    for (std::size_t j = 0; j < tr.means->size(); ++j) {
      const Vec4& m = (*tr.means)[j];
      const Mat4& c = (*tr.covs)[j];
      table.rows.push_back({tr.id, io::format_double((*tr.times)[j]), io::format_double(m[0]),
                            io::format_double(m[1]), io::format_double(m[2]), io::format_double(m[3]),
                            io::format_double(c(0, 0)), io::format_double(c(1, 1))});
    }
  }
  io::write_csv(path, table);
}

}  // namespace ccvm::ssm
