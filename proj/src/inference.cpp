#include "ccvm/inference.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ccvm/errors.hpp"

namespace ccvm::inference {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kZ975 = 1.959963984540054;
constexpr std::size_t kCacheSlots = 6;
constexpr double kBoundarySigma = 1e-6;

double floored_log_sigma(double v) { return std::max(v, std::log(kSigmaFloor)); }

struct Stencil {
  double center = 0.0;
  Vec2d grad = Vec2d::Zero();
  Mat2d hess = Mat2d::Zero();
};

// Nine-point central differences of f around b with step h.
Stencil stencil(const std::function<double(const Vec2d&)>& f, const Vec2d& b, double h) {
  auto at = [&](double dx, double dy) { return f(b + Vec2d(dx * h, dy * h)); };
  Stencil s;
  s.center = at(0, 0);
  const double fp0 = at(1, 0);
  const double fm0 = at(-1, 0);
  const double f0p = at(0, 1);
  const double f0m = at(0, -1);
  const double fpp = at(1, 1);
  const double fpm = at(1, -1);
  const double fmp = at(-1, 1);
  const double fmm = at(-1, -1);
  s.grad << (fp0 - fm0) / (2 * h), (f0p - f0m) / (2 * h);
  s.hess(0, 0) = (fp0 - 2 * s.center + fm0) / (h * h);
  s.hess(1, 1) = (f0p - 2 * s.center + f0m) / (h * h);
  s.hess(0, 1) = s.hess(1, 0) = (fpp - fpm - fmp + fmm) / (4 * h * h);
  return s;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string to_string(ModelKind k) { return k == ModelKind::baseline ? "baseline" : "response"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "baseline") return ModelKind::baseline;
  if (s == "response") return ModelKind::response;
  throw InputError("unknown model kind '" + s + "' (expected baseline or response)");
}

std::vector<std::string> ParameterModel::names() const {
  if (kind == ModelKind::baseline) return {"tau0", "nu0", "sigma_tau", "sigma_nu"};
  return {"alpha_tau", "alpha_nu"};
}

void ParameterModel::validate() const {
  if (!(std::isfinite(sigma_obs) && sigma_obs > 0.0)) throw InputError("sigma_obs must be > 0");
  if (omega) omega->validate();
  if (kind == ModelKind::response) {
    const double v[] = {offsets.log_tau0, offsets.log_nu0, offsets.log_sigma_tau, offsets.log_sigma_nu};
    for (double x : v) {
      if (!std::isfinite(x)) throw InputError("response offsets must be finite");
    }
  }
}

PopulationValues population(const ThetaVector& theta, const ParameterModel& model) {
  if (static_cast<std::size_t>(theta.size()) != model.dim()) {
    throw InputError("parameter vector has the wrong dimension");
  }
  if (!theta.allFinite()) throw InputError("parameter vector must be finite");
  PopulationValues p;
  if (model.kind == ModelKind::baseline) {
    p.log_tau0 = theta[0];
    p.log_nu0 = theta[1];
    p.sigma_tau = std::exp(floored_log_sigma(theta[2]));
    p.sigma_nu = std::exp(floored_log_sigma(theta[3]));
  } else {
    p.log_tau0 = model.offsets.log_tau0;
    p.log_nu0 = model.offsets.log_nu0;
    p.sigma_tau = std::exp(floored_log_sigma(model.offsets.log_sigma_tau));
    p.sigma_nu = std::exp(floored_log_sigma(model.offsets.log_sigma_nu));
    p.alpha_tau = theta[0];
    p.alpha_nu = theta[1];
  }
  return p;
}

ThetaVector default_init(const ParameterModel& model) {
  if (model.kind == ModelKind::baseline) {
    ThetaVector t(4);
    t << 0.0, 0.0, std::log(0.5), std::log(0.5);
    return t;
  }
  return ThetaVector::Zero(2);
}

Individual::Individual(const Track& track, const ParameterModel& model)
    : track_(&track), sigma_obs_(model.sigma_obs) {
  track.validate();
  const std::size_t n = track.size();
  if (n < 2) throw InputError("track " + track.id + " needs at least 2 observations");
  if (model.omega && track.grids.size() != n - 1) {
    throw InputError("track " + track.id + " has no covariate grid for every interval");
  }
  exposure_.resize(n, 0.0);
  if (model.kind == ModelKind::response) {
    for (std::size_t j = 0; j < n; ++j) exposure_[j] = track.covariate_or_zero(model.exposure_channel, j);
  }
  dts_.resize(n - 1);
  omegas_.resize(n - 1);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    if (model.omega) {
      const IntervalGrid& g = track.grids[j];
      if (g.times.size() < 2 || g.theta.size() != g.times.size() || g.d_shore.size() != g.times.size()) {
        throw InputError("malformed covariate grid on track " + track.id);
      }
      for (std::size_t l = 0; l + 1 < g.times.size(); ++l) {
        dts_[j].push_back(g.times[l + 1] - g.times[l]);
        omegas_[j].push_back(crcvm::omega_fn(*model.omega, g.theta[l], g.d_shore[l]));
      }
    } else {
      dts_[j].push_back(track.times[j + 1] - track.times[j]);
      omegas_[j].push_back(0.0);
    }
  }
}

const std::vector<ssm::CompositeKernel>& Individual::unit_kernels(double log_tau_base,
                                                                   double alpha_tau) const {
  for (const auto& e : cache_) {
    if (e.log_tau_base == log_tau_base && e.alpha_tau == alpha_tau) return e.kernels;
  }
  CacheEntry entry{log_tau_base, alpha_tau, {}};
  entry.kernels.reserve(dts_.size());
  for (std::size_t j = 0; j < dts_.size(); ++j) {
    const double tau = std::exp(log_tau_base + alpha_tau * exposure_[j]);
    if (!(tau > 0.0) || !std::isfinite(tau)) throw NumericalError("tau out of range for track " + track_->id);
    entry.kernels.push_back(kernel::compose(tau, 1.0, dts_[j], omegas_[j]));
  }
  if (cache_.size() < kCacheSlots) {
    cache_.push_back(std::move(entry));
    return cache_.back().kernels;
  }
  const std::size_t slot = next_slot_;
  next_slot_ = (next_slot_ + 1) % kCacheSlots;
  cache_[slot] = std::move(entry);
  return cache_[slot].kernels;
}

double Individual::loglik(const PopulationValues& pop, const Vec2d& b) const {
  const auto& unit = unit_kernels(pop.log_tau0 + b[0], pop.alpha_tau);
  std::vector<ssm::CompositeKernel> kernels(unit);
  const double base_nu = pop.log_nu0 + b[1];
  for (std::size_t j = 0; j < kernels.size(); ++j) {
    const double nu = std::exp(base_nu + pop.alpha_nu * exposure_[j]);
    if (!(nu > 0.0) || !std::isfinite(nu)) throw NumericalError("nu out of range for track " + track_->id);
    kernels[j].Q *= nu * nu;
  }
  const double nu0 = std::exp(base_nu + pop.alpha_nu * exposure_[0]);
  const auto init = ssm::default_initial_state(*track_, sigma_obs_, nu0);
  return ssm::kalman_loglik_value(kernels, *track_, ssm::MeasurementModel{sigma_obs_}, init);
}

InnerResult laplace_2d(const std::function<double(const Vec2d&)>& smooth, const Vec2d& prior_precision,
                       const InnerOptions& opts) {
  double log_norm = 0.0;
  for (int k = 0; k < 2; ++k) {
    if (prior_precision[k] < 0.0) throw InputError("prior precision must be >= 0");
    if (prior_precision[k] > 0.0) log_norm += 0.5 * (std::log(prior_precision[k]) - kLog2Pi);
  }
  auto prior = [&](const Vec2d& b) {
    return -0.5 * (prior_precision.array() * b.array().square()).sum() + log_norm;
  };
  auto full = [&](const Vec2d& b) { return smooth(b) + prior(b); };

  Vec2d b = Vec2d::Zero();
  for (int it = 0; it <= opts.max_iter; ++it) {
    const Stencil s = stencil(smooth, b, opts.fd_step);
    const double value = s.center + prior(b);
    const Vec2d g = s.grad - prior_precision.cwiseProduct(b);
    Mat2d h = -s.hess;
    h.diagonal() += prior_precision;
    h = 0.5 * (h + h.transpose()).eval();

    Vec2d delta = Vec2d::Zero();
    const bool small_grad = g.lpNorm<Eigen::Infinity>() < opts.grad_tol;
    Eigen::LLT<Mat2d> llt(h);
    const bool pd = llt.info() == Eigen::Success && h.determinant() > 0.0;
    if (!small_grad) {
      if (pd) {
        delta = llt.solve(g);
      } else {
        // Shift the spectrum until positive definite.
        Eigen::SelfAdjointEigenSolver<Mat2d> es(h);
        const double shift = std::abs(es.eigenvalues().minCoeff()) + 1.0 + h.diagonal().cwiseAbs().maxCoeff() * 1e-3;
        delta = (h + shift * Mat2d::Identity()).ldlt().solve(g);
      }
    }
    if (small_grad || delta.lpNorm<Eigen::Infinity>() < opts.step_tol) {
      if (!pd) throw NumericalError("inner Hessian not positive definite at the mode");
      InnerResult r;
      r.mode = b;
      r.value = value;
      r.neg_hessian = h;
      const Mat2d l = llt.matrixL();
      r.log_det = 2.0 * (std::log(l(0, 0)) + std::log(l(1, 1)));
      r.iterations = it;
      r.laplace = value + kLog2Pi - 0.5 * r.log_det;
      return r;
    }
    if (it == opts.max_iter) break;

    double alpha = 1.0;
    bool moved = false;
    const double tol = 1e-11 * (1.0 + std::abs(value));
    for (int bt = 0; bt < 40; ++bt) {
      const Vec2d trial = b + alpha * delta;
      double v = -std::numeric_limits<double>::infinity();
      try {
        v = full(trial);
      } catch (const NumericalError&) {
      }
      if (std::isfinite(v) && v >= value - tol) {
        b = trial;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) {
      throw NumericalError("inner Newton line search failed (gradient norm " +
                           std::to_string(g.lpNorm<Eigen::Infinity>()) + ")");
    }
  }
  throw NumericalError("inner Newton did not converge in " + std::to_string(opts.max_iter) + " iterations");
}

Problem::Problem(const Dataset& data, ParameterModel model, InnerOptions inner)
    : model_(std::move(model)), inner_(inner) {
  model_.validate();
  if (data.empty()) throw InputError("empty dataset");
  individuals_.reserve(data.size());
  for (const auto& t : data) individuals_.emplace_back(t, model_);
}

Vec2d Problem::prior_precision(const PopulationValues& pop) const {
  return Vec2d(1.0 / (pop.sigma_tau * pop.sigma_tau), 1.0 / (pop.sigma_nu * pop.sigma_nu));
}

double Problem::joint_negloglik(const ThetaVector& theta, const std::vector<Vec2d>& b) const {
  if (b.size() != individuals_.size()) throw InputError("need one random effect per individual");
  const PopulationValues pop = population(theta, model_);
  const Vec2d prec = prior_precision(pop);
  std::vector<double> terms(individuals_.size());
  for (std::size_t i = 0; i < individuals_.size(); ++i) {
    const double prior = -kLog2Pi + 0.5 * (std::log(prec[0]) + std::log(prec[1])) -
                         0.5 * (prec.array() * b[i].array().square()).sum();
    terms[i] = individuals_[i].loglik(pop, b[i]) + prior;
  }
  return -ssm::pairwise_sum(terms);
}

double Problem::laplace_negloglik(const ThetaVector& theta, std::vector<InnerResult>* inner) const {
  const PopulationValues pop = population(theta, model_);
  const Vec2d prec = prior_precision(pop);
  std::vector<double> terms(individuals_.size());
  if (inner) inner->resize(individuals_.size());
  for (std::size_t i = 0; i < individuals_.size(); ++i) {
    const Individual& ind = individuals_[i];
    const InnerResult r = laplace_2d([&](const Vec2d& b) { return ind.loglik(pop, b); }, prec, inner_);
    terms[i] = r.laplace;
    if (inner) (*inner)[i] = r;
  }
  return -ssm::pairwise_sum(terms);
}

std::vector<Estimate> wald_estimates(const ParameterModel& model, const ThetaVector& theta,
                                     const Mat& hessian, bool hessian_pd) {
  const auto names = model.names();
  const Eigen::Index n = theta.size();
  Vec se = Vec::Constant(n, std::numeric_limits<double>::quiet_NaN());
  if (hessian_pd) se = hessian.inverse().diagonal().cwiseSqrt();
  std::vector<Estimate> out;
  for (Eigen::Index i = 0; i < n; ++i) {
    Estimate e;
    e.name = names[static_cast<std::size_t>(i)];
    e.log_scale = model.kind == ModelKind::baseline;
    e.transformed = theta[i];
    if (e.log_scale && i >= 2) e.transformed = floored_log_sigma(theta[i]);
    e.se = se[i];
    e.transformed_lo = e.transformed - kZ975 * e.se;
    e.transformed_hi = e.transformed + kZ975 * e.se;
    if (e.log_scale) {
      e.value = std::exp(e.transformed);
      e.lo = std::exp(e.transformed_lo);
      e.hi = std::exp(e.transformed_hi);
      if (i >= 2 && e.value < kBoundarySigma) e.at_boundary = true;
    } else {
      e.value = e.transformed;
      e.lo = e.transformed_lo;
      e.hi = e.transformed_hi;
    }
    out.push_back(e);
  }
  return out;
}

FitResult fit(const Dataset& data, const ParameterModel& model, const ThetaVector& init,
              const FitOptions& opts) {
  const Problem problem(data, model, opts.inner);
  if (static_cast<std::size_t>(init.size()) != model.dim() || !init.allFinite()) {
    throw InputError("initial parameter vector has the wrong dimension or is not finite");
  }
  const optim::Objective f = [&](const Vec& x) { return problem.laplace_negloglik(x); };
  const optim::BfgsResult opt = optim::minimize_bfgs(f, init, opts.outer);

  FitResult r;
  r.model = model;
  r.theta_hat = opt.x;
  r.loglik = -opt.f;
  r.gradient_norm = opt.gradient.lpNorm<Eigen::Infinity>();
  r.iterations = opt.iterations;
  r.evaluations = opt.evaluations;
  r.status = optim::to_string(opt.status);
  r.converged = opt.status == optim::Status::converged;

  r.hessian = optim::central_hessian(f, opt.x, opt.f, opts.hessian_step);
  r.hessian = 0.5 * (r.hessian + r.hessian.transpose()).eval();
  Eigen::LLT<Mat> llt(r.hessian);
  r.hessian_pd = llt.info() == Eigen::Success;
  // one individual carries no information on the random-effect scales
  const bool single = model.kind == ModelKind::baseline && data.size() == 1;
  if (single) r.hessian_pd = false;
  r.estimates = wald_estimates(model, r.theta_hat, r.hessian, r.hessian_pd);

  std::vector<InnerResult> inner;
  problem.laplace_negloglik(r.theta_hat, &inner);
  for (std::size_t i = 0; i < data.size(); ++i) {
    r.individual_ids.push_back(data[i].id);
    r.random_effects.push_back(inner[i].mode);
  }

  if (!r.converged) {
    r.warnings.push_back("optimizer stopped with status " + r.status + " (gradient norm " +
                         std::to_string(r.gradient_norm) + ")");
  }
  if (single) {
    r.warnings.push_back("single individual: random-effect scales are not identifiable, Hessian flagged");
  } else if (!r.hessian_pd) {
    r.warnings.push_back("Hessian not positive definite: confidence intervals unavailable");
  }
  for (const auto& e : r.estimates) {
    if (e.at_boundary) r.warnings.push_back(e.name + " at the lower boundary (reported as 0)");
  }
  if (model.kind == ModelKind::response) {
    bool any = false;
    for (const auto& t : data) {
      for (std::size_t j = 0; j < t.size(); ++j) any = any || t.covariate_or_zero(model.exposure_channel, j) != 0.0;
    }
    if (!any) r.warnings.push_back("exposure identically zero: response slopes are not identifiable");
  }
  return r;
}

std::vector<ThetaVector> posterior_samples(const FitResult& fit, std::size_t n, Rng& rng) {
  if (!fit.hessian_pd) throw NumericalError("posterior draws need a positive definite Hessian");
  const Mat cov = fit.hessian.inverse();
  Eigen::LLT<Mat> llt(0.5 * (cov + cov.transpose()));
  if (llt.info() != Eigen::Success) throw NumericalError("inverse Hessian is not positive definite");
  const Mat l = llt.matrixL();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ThetaVector> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Vec z(fit.theta_hat.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    out.push_back(fit.theta_hat + l * z);
  }
  return out;
}

nlohmann::json to_json(const crcvm::OmegaParams& p) {
  return {{"a", p.a}, {"b", p.b}, {"D_r", p.d_r}, {"D_a", p.d_a}, {"sigma_theta", p.sigma_theta},
          {"sigma_D", p.sigma_d}};
}

crcvm::OmegaParams omega_from_json(const nlohmann::json& j) {
  crcvm::OmegaParams p;
  p.a = j.value("a", p.a);
  p.b = j.value("b", p.b);
  p.d_r = j.value("D_r", p.d_r);
  p.d_a = j.value("D_a", p.d_a);
  p.sigma_theta = j.value("sigma_theta", p.sigma_theta);
  p.sigma_d = j.value("sigma_D", p.sigma_d);
  p.validate();
  return p;
}

nlohmann::json to_json(const FitResult& fit) {
  using nlohmann::json;
  json model = {{"kind", to_string(fit.model.kind)},
                {"sigma_obs", fit.model.sigma_obs},
                {"exposure_channel", fit.model.exposure_channel},
                {"omega", fit.model.omega ? to_json(*fit.model.omega) : json(nullptr)}};
  if (fit.model.kind == ModelKind::response) {
    model["offsets"] = {{"log_tau0", fit.model.offsets.log_tau0},
                        {"log_nu0", fit.model.offsets.log_nu0},
                        {"log_sigma_tau", fit.model.offsets.log_sigma_tau},
                        {"log_sigma_nu", fit.model.offsets.log_sigma_nu}};
  }
  json hess = json::array();
  for (Eigen::Index i = 0; i < fit.hessian.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < fit.hessian.cols(); ++k) row.push_back(fit.hessian(i, k));
    hess.push_back(row);
  }
  json est = json::array();
  for (const auto& e : fit.estimates) {
    est.push_back({{"name", e.name},
                   {"transformed", e.transformed},
                   {"se", std::isfinite(e.se) ? json(e.se) : json(nullptr)},
                   {"transformed_ci", {std::isfinite(e.se) ? json(e.transformed_lo) : json(nullptr),
                                       std::isfinite(e.se) ? json(e.transformed_hi) : json(nullptr)}},
                   {"value", e.at_boundary ? 0.0 : e.value},
                   {"ci", {std::isfinite(e.se) ? json(e.lo) : json(nullptr),
                           std::isfinite(e.se) ? json(e.hi) : json(nullptr)}},
                   {"scale", e.log_scale ? "log" : "identity"},
                   {"at_boundary", e.at_boundary}});
  }
  json re = json::array();
  for (std::size_t i = 0; i < fit.random_effects.size(); ++i) {
    re.push_back({{"id", fit.individual_ids[i]},
                  {"b_tau", fit.random_effects[i][0]},
                  {"b_nu", fit.random_effects[i][1]}});
  }
  json theta = json::array();
  for (Eigen::Index i = 0; i < fit.theta_hat.size(); ++i) theta.push_back(fit.theta_hat[i]);
  return {{"model", model},
          {"parameters", fit.model.names()},
          {"theta_hat", theta},
          {"loglik", fit.loglik},
          {"hessian", hess},
          {"hessian_pd", fit.hessian_pd},
          {"estimates", est},
          {"random_effects", re},
          {"diagnostics",
           {{"gradient_norm", fit.gradient_norm},
            {"iterations", fit.iterations},
            {"evaluations", fit.evaluations},
            {"status", fit.status},
            {"converged", fit.converged}}},
          {"warnings", fit.warnings}};
}

FitResult fit_from_json(const nlohmann::json& j) {
  try {
    FitResult r;
    const auto& m = j.at("model");
    r.model.kind = model_kind_from_string(m.at("kind").get<std::string>());
    r.model.sigma_obs = m.at("sigma_obs").get<double>();
    r.model.exposure_channel = m.value("exposure_channel", std::string("E_ship"));
    if (m.contains("omega") && !m.at("omega").is_null()) r.model.omega = omega_from_json(m.at("omega"));
    if (m.contains("offsets")) {
      const auto& o = m.at("offsets");
      r.model.offsets = Offsets{o.at("log_tau0").get<double>(), o.at("log_nu0").get<double>(),
                                o.at("log_sigma_tau").get<double>(), o.at("log_sigma_nu").get<double>()};
    }
    const auto theta = j.at("theta_hat").get<std::vector<double>>();
    r.theta_hat = Eigen::Map<const Vec>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    if (static_cast<std::size_t>(r.theta_hat.size()) != r.model.dim()) {
      throw InputError("fit JSON: theta_hat has the wrong dimension");
    }
    r.loglik = j.at("loglik").get<double>();
    const auto hess = j.at("hessian").get<std::vector<std::vector<double>>>();
    r.hessian.resize(r.theta_hat.size(), r.theta_hat.size());
    if (hess.size() != r.model.dim()) throw InputError("fit JSON: hessian has the wrong shape");
    for (std::size_t i = 0; i < hess.size(); ++i) {
      if (hess[i].size() != r.model.dim()) throw InputError("fit JSON: hessian has the wrong shape");
      for (std::size_t k = 0; k < hess[i].size(); ++k) {
        r.hessian(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = hess[i][k];
      }
    }
    r.hessian_pd = j.at("hessian_pd").get<bool>();
    r.estimates = wald_estimates(r.model, r.theta_hat, r.hessian, r.hessian_pd);
    for (const auto& e : j.value("random_effects", nlohmann::json::array())) {
      r.individual_ids.push_back(e.at("id").get<std::string>());
      r.random_effects.emplace_back(e.at("b_tau").get<double>(), e.at("b_nu").get<double>());
    }
    if (j.contains("diagnostics")) {
      const auto& d = j.at("diagnostics");
      r.gradient_norm = d.value("gradient_norm", 0.0);
      r.iterations = d.value("iterations", 0);
      r.evaluations = d.value("evaluations", 0);
      r.status = d.value("status", std::string());
      r.converged = d.value("converged", false);
    }
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed fit JSON: ") + e.what());
  }
}

ResponseSummary fit_response(const Dataset& data, const std::vector<ThetaVector>& baseline_draws,
                             const ParameterModel& response_model, const FitOptions& opts,
                             const std::function<void(const ResponseDraw&)>& progress) {
  if (response_model.kind != ModelKind::response) throw InputError("fit_response needs a response model");
  if (baseline_draws.empty()) throw InputError("fit_response needs at least one baseline draw");
  ResponseSummary out;
  out.unidentifiable = true;
  for (const auto& t : data) {
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (t.covariate_or_zero(response_model.exposure_channel, j) != 0.0) out.unidentifiable = false;
    }
  }
  std::vector<double> at;
  std::vector<double> an;
  for (std::size_t d = 0; d < baseline_draws.size(); ++d) {
    const ThetaVector& draw = baseline_draws[d];
    ResponseDraw rd;
    rd.draw = d;
    try {
      if (draw.size() != 4) throw InputError("baseline draw must have 4 entries");
      ParameterModel m = response_model;
      m.offsets = Offsets{draw[0], draw[1], draw[2], draw[3]};
      const FitResult fr = fit(data, m, default_init(m), opts);
      rd.alpha = fr.theta_hat;
      rd.status = fr.status;
      rd.ok = fr.theta_hat.allFinite();
      if (!rd.ok) rd.reason = "non-finite estimate";
    } catch (const NumericalError& e) {
      rd.ok = false;
      rd.reason = e.what();
    }
    if (rd.ok) {
      at.push_back(rd.alpha[0]);
      an.push_back(rd.alpha[1]);
    } else {
      ++out.failures;
    }
    if (progress) progress(rd);
    out.draws.push_back(rd);
  }
  if (static_cast<double>(out.failures) > 0.2 * static_cast<double>(baseline_draws.size())) {
    throw BatchFailure(std::to_string(out.failures) + " of " + std::to_string(baseline_draws.size()) +
                       " response fits failed");
  }
  const double k = static_cast<double>(at.size());
  out.mean = Vec2d(std::accumulate(at.begin(), at.end(), 0.0) / k, std::accumulate(an.begin(), an.end(), 0.0) / k);
  out.q025 = Vec2d(quantile(at, 0.025), quantile(an, 0.025));
  out.q975 = Vec2d(quantile(at, 0.975), quantile(an, 0.975));
  return out;
}

double recovery_distance(double alpha, double p, RecoveryKind kind) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("recovery fraction p must lie in (0, 1)");
  if (!std::isfinite(alpha)) throw InputError("alpha must be finite");
  return kind == RecoveryKind::tau ? alpha / std::log1p(-p) : alpha / std::log1p(p);
}

RecoveryRow recovery_interval(double alpha, double alpha_lo, double alpha_hi, double p, RecoveryKind kind) {
  RecoveryRow r;
  r.p = p;
  r.estimate = recovery_distance(alpha, p, kind);
  const double a = recovery_distance(alpha_lo, p, kind);
  const double b = recovery_distance(alpha_hi, p, kind);
  r.lo = std::min(a, b);
  r.hi = std::max(a, b);
  r.sign_ok = kind == RecoveryKind::tau ? alpha < 0.0 : alpha > 0.0;
  return r;
}

}  // namespace ccvm::inference
