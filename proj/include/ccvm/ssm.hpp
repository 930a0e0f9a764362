#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ccvm/kernel.hpp"
#include "ccvm/track.hpp"

namespace ccvm::ssm {

using kernel::CompositeKernel;
using kernel::Mat2;
using kernel::Mat4;
using kernel::Vec4;
using Mat24 = Eigen::Matrix<double, 2, 4>;

/// y_j = Z U_j + eps_j, eps_j ~ N(0, sigma_obs^2 I), Z = [I 0].
struct MeasurementModel {
  double sigma_obs = 0.01;  // km

  static Mat24 Z();
  void validate() const;
};

struct InitialState {
  Vec4 mean = Vec4::Zero();
  Mat4 cov = Mat4::Identity();
};

/// Prior of the state at the first observation time: position
/// N(y_1, sigma_obs^2 I), velocity N(0, 2 nu^2/pi I).
InitialState default_initial_state(const Track& track, double sigma_obs, double nu);

/// Maps (track, observation index) to a positive parameter value.
using ParamFn = std::function<double(const Track&, std::size_t)>;
/// Angular velocity from (theta, d_shore).
using OmegaFn = std::function<double(double, double)>;

/// One composite kernel per observation interval. tau and nu are held at
/// their left-endpoint values; omega follows the interval's covariate grid,
/// one sub-step per grid cell evaluated at the cell's left node. Without an
/// omega function each interval is a single constant-parameter CVM step.
std::vector<CompositeKernel> build_state_space(const Track& track, const ParamFn& tau_fn,
                                               const ParamFn& nu_fn, const OmegaFn& omega = {});

struct KalmanResult {
  double loglik = 0.0;
  std::vector<double> loglik_terms;
  std::vector<Vec4> predicted_means;  // prior at observation j
  std::vector<Mat4> predicted_covs;
  std::vector<Vec4> filtered_means;
  std::vector<Mat4> filtered_covs;
  std::vector<Vec2> innovations;
  std::vector<Mat2> innovation_covs;
};

/// Covariance-form Kalman filter; every observation, the first included, is
/// an update. Throws NumericalError if an innovation covariance is not
/// positive definite.
KalmanResult kalman_loglik(std::span<const CompositeKernel> kernels, const Track& track,
                           const MeasurementModel& mm, const InitialState& init);

/// Log-likelihood only; same arithmetic as kalman_loglik without storing
/// the per-step states.
double kalman_loglik_value(std::span<const CompositeKernel> kernels, const Track& track,
                           const MeasurementModel& mm, const InitialState& init);

struct SmoothedStates {
  std::vector<Vec4> means;
  std::vector<Mat4> covs;
};

/// Rauch-Tung-Striebel backward pass.
SmoothedStates rts_smoother(const KalmanResult& result, std::span<const CompositeKernel> kernels);

/// Order-independent-enough summation for log-likelihood sums.
double pairwise_sum(std::span<const double> values);

struct StateRows {
  std::string id;
  const std::vector<double>* times = nullptr;
  const std::vector<Vec4>* means = nullptr;
  const std::vector<Mat4>* covs = nullptr;
};

/// CSV `id,t,x_hat,y_hat,vx_hat,vy_hat,var_x,var_y`.
void write_states(const std::string& path, const std::vector<StateRows>& tracks);

}  // namespace ccvm::ssm
