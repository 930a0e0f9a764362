#pragma once

#include <Eigen/Core>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "ccvm/crcvm.hpp"
#include "ccvm/optim.hpp"
#include "ccvm/random.hpp"
#include "ccvm/ssm.hpp"
#include "ccvm/track.hpp"

namespace ccvm::inference {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2d = Eigen::Vector2d;
using Mat2d = Eigen::Matrix2d;

/// Lower bound on the random-effect scales; log sigma is clamped to log(kSigmaFloor).
constexpr double kSigmaFloor = 1e-8;

enum class ModelKind { baseline, response };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

/// Free parameters (unconstrained scale):
///   baseline: (log tau0, log nu0, log sigma_tau, log sigma_nu)
///   response: (alpha_tau, alpha_nu)
using ThetaVector = Vec;

struct Offsets {
  double log_tau0 = 0.0;
  double log_nu0 = 0.0;
  double log_sigma_tau = std::log(0.5);
  double log_sigma_nu = std::log(0.5);
};

/// log tau_i(t) = log tau0 + alpha_tau E(t) + b_tau,i and likewise for nu;
/// (b_tau, b_nu) ~ N(0, diag(sigma_tau^2, sigma_nu^2)). Without an omega
/// surface the model is the plain CVM.
struct ParameterModel {
  ModelKind kind = ModelKind::baseline;
  std::optional<crcvm::OmegaParams> omega;
  double sigma_obs = 0.01;                  // km, fixed
  std::string exposure_channel = "E_ship";  // response only
  Offsets offsets;                          // response only: frozen baseline values

  std::size_t dim() const { return kind == ModelKind::baseline ? 4 : 2; }
  std::vector<std::string> names() const;
  void validate() const;
};

struct PopulationValues {
  double log_tau0 = 0.0;
  double log_nu0 = 0.0;
  double sigma_tau = 0.0;
  double sigma_nu = 0.0;
  double alpha_tau = 0.0;
  double alpha_nu = 0.0;
};

PopulationValues population(const ThetaVector& theta, const ParameterModel& model);

/// Default starting point: tau0 = 1 h, nu0 = 1 km/h, sigmas 0.5; alphas 0.
ThetaVector default_init(const ParameterModel& model);

/// Per-individual precomputed data and a small kernel cache.
class Individual {
 public:
  Individual(const Track& track, const ParameterModel& model);

  const Track& track() const { return *track_; }

  /// Kalman log-likelihood at random effect b (no prior term).
  double loglik(const PopulationValues& pop, const Vec2d& b) const;

 private:
  struct CacheEntry {
    double log_tau_base;
    double alpha_tau;
    std::vector<ssm::CompositeKernel> kernels;  // nu = 1
  };
  const std::vector<ssm::CompositeKernel>& unit_kernels(double log_tau_base, double alpha_tau) const;

  const Track* track_;
  double sigma_obs_;
  std::vector<double> exposure_;
  std::vector<std::vector<double>> dts_;
  std::vector<std::vector<double>> omegas_;
  mutable std::vector<CacheEntry> cache_;
  mutable std::size_t next_slot_ = 0;
};

struct InnerOptions {
  int max_iter = 50;
  double grad_tol = 1e-8;
  double step_tol = 1e-9;  // Newton step size treated as converged
  double fd_step = 1e-3;  // second differences of the Kalman part
};

struct InnerResult {
  Vec2d mode = Vec2d::Zero();
  double value = 0.0;  // l(mode), prior included
  Mat2d neg_hessian = Mat2d::Zero();
  double log_det = 0.0;
  int iterations = 0;
  /// l(mode) + log(2 pi) - 0.5 log det(neg_hessian)
  double laplace = 0.0;
};

/// Laplace approximation of log int exp(l(b)) db for
///   l(b) = smooth(b) - 0.5 sum prec_k b_k^2 + sum_{prec_k > 0} 0.5 log(prec_k / 2 pi).
/// Newton from b = 0 with finite-difference derivatives of `smooth`; the
/// Gaussian prior term is differentiated exactly. Throws NumericalError on
/// non-convergence or a non positive definite Hessian at the mode.
InnerResult laplace_2d(const std::function<double(const Vec2d&)>& smooth, const Vec2d& prior_precision,
                       const InnerOptions& opts = {});

/// Data and model bound together for repeated objective evaluations.
class Problem {
 public:
  /// Tracks need covariate grids when the model has an omega surface.
  Problem(const Dataset& data, ParameterModel model, InnerOptions inner = {});

  const ParameterModel& model() const { return model_; }
  std::size_t size() const { return individuals_.size(); }
  const Individual& individual(std::size_t i) const { return individuals_[i]; }

  /// -sum_i [kalman loglik_i + log N(b_i; 0, diag(sigma^2))]
  double joint_negloglik(const ThetaVector& theta, const std::vector<Vec2d>& b) const;
  /// -sum_i [l_i(b_i) + log 2 pi - 0.5 log det H_i] at the inner modes.
  double laplace_negloglik(const ThetaVector& theta, std::vector<InnerResult>* inner = nullptr) const;

 private:
  Vec2d prior_precision(const PopulationValues& pop) const;

  ParameterModel model_;
  InnerOptions inner_;
  std::vector<Individual> individuals_;
};

struct FitOptions {
  optim::BfgsOptions outer;
  InnerOptions inner;
  double hessian_step = 1e-3;  // relative step of the outer second differences
};

struct Estimate {
  std::string name;
  double transformed = 0.0;
  double se = 0.0;
  double transformed_lo = 0.0;
  double transformed_hi = 0.0;
  double value = 0.0;  // natural scale
  double lo = 0.0;
  double hi = 0.0;
  bool log_scale = false;
  bool at_boundary = false;
};

struct FitResult {
  ParameterModel model;
  ThetaVector theta_hat;
  double loglik = 0.0;  // Laplace marginal log-likelihood at the optimum
  Mat hessian;          // of the negative marginal log-likelihood
  bool hessian_pd = false;
  std::vector<Estimate> estimates;
  std::vector<std::string> individual_ids;
  std::vector<Vec2d> random_effects;
  double gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  std::string status;
  bool converged = false;
  std::vector<std::string> warnings;
};

/// Natural-scale values: exp for log-scale entries, identity for slopes.
std::vector<Estimate> wald_estimates(const ParameterModel& model, const ThetaVector& theta,
                                     const Mat& hessian, bool hessian_pd);

FitResult fit(const Dataset& data, const ParameterModel& model, const ThetaVector& init,
              const FitOptions& opts = {});

/// Draws from N(theta_hat, H^-1). Throws NumericalError if H is not positive definite.
std::vector<ThetaVector> posterior_samples(const FitResult& fit, std::size_t n, Rng& rng);

nlohmann::json to_json(const FitResult& fit);
FitResult fit_from_json(const nlohmann::json& j);
nlohmann::json to_json(const crcvm::OmegaParams& p);
crcvm::OmegaParams omega_from_json(const nlohmann::json& j);

struct ResponseDraw {
  std::size_t draw = 0;
  bool ok = false;
  Vec2d alpha = Vec2d::Zero();
  std::string status;
  std::string reason;
};

struct ResponseSummary {
  std::vector<ResponseDraw> draws;
  std::size_t failures = 0;
  Vec2d mean = Vec2d::Zero();
  Vec2d q025 = Vec2d::Zero();
  Vec2d q975 = Vec2d::Zero();
  bool unidentifiable = false;  // exposure identically zero
};

/// For each baseline draw (log tau0, log nu0, log sigma_tau, log sigma_nu)
/// fit (alpha_tau, alpha_nu) with those values frozen as offsets. Failed
/// draws are recorded and excluded; more than 20% failures throws BatchFailure.
ResponseSummary fit_response(const Dataset& data, const std::vector<ThetaVector>& baseline_draws,
                             const ParameterModel& response_model, const FitOptions& opts = {},
                             const std::function<void(const ResponseDraw&)>& progress = {});

enum class RecoveryKind { tau, nu };

/// D_tau(p) = alpha / log(1 - p), D_nu(p) = alpha / log(1 + p), in km.
double recovery_distance(double alpha, double p, RecoveryKind kind);

struct RecoveryRow {
  double p = 0.0;
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool sign_ok = true;  // alpha_tau < 0, alpha_nu > 0
};

/// Estimate and CI, the CI endpoints being the distances of alpha's CI endpoints (sorted).
RecoveryRow recovery_interval(double alpha, double alpha_lo, double alpha_hi, double p, RecoveryKind kind);

}  // namespace ccvm::inference
