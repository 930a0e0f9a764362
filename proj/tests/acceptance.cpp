// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// checked criterion fails. Arguments select criteria by number (default: all).

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ccvm/crcvm.hpp"
#include "ccvm/inference.hpp"
#include "ccvm/io.hpp"
#include "ccvm/kernel.hpp"
#include "ccvm/ssm.hpp"
#include "ccvm/workflows.hpp"
#include "geometry_props.hpp"
#include "oracles.hpp"

using namespace ccvm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool informational = false;
};

double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// 1: Euler Monte Carlo of the RCVM against the closed-form kernel
Outcome kernel_exactness() {
  const double tau = 1.0, nu = 4.0;
  const oracle::Vec u0 = (oracle::Vec(4) << 0.0, 0.0, 1.0, -2.0).finished();
  double worst = 0.0;  // largest |error| / SE
  int fails = 0, checks = 0;
  std::uint64_t stream = 0;
  for (double omega : {0.0, 1.0, 5.0}) {
    for (double dt : {0.1, 0.5}) {
      Rng rng = make_rng(101, stream++);
      const auto m = oracle::euler_moments(tau, nu, omega, dt, u0, 100000, 1e-4, rng);
      const auto k = kernel::transition_kernel(kernel::RcvmParams{tau, nu, omega}, dt);
      const kernel::Vec4 mean = k.T * kernel::Vec4(u0);
      for (int i = 0; i < 4; ++i) {
        const double z = std::abs(m.mean[i] - mean[i]) / m.mean_se[i];
        worst = std::max(worst, z);
        fails += z > 3.0;
        ++checks;
        for (int j = i; j < 4; ++j) {
          const double zc = std::abs(m.cov(i, j) - k.Q(i, j)) / m.cov_se(i, j);
          worst = std::max(worst, zc);
          fails += zc > 3.0;
          ++checks;
        }
      }
    }
  }
  return {fails == 0, fmt("%.0f of %.0f moments beyond 3 SE, worst %.2f SE", fails, checks, worst)};
}

// 2: omega = 0 against the integrated Ornstein-Uhlenbeck forms
Outcome johnson_reduction() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double tau = 0.1 + 5.0 * u(rng);
    const double nu = 0.1 + 8.0 * u(rng);
    const double dt = 0.01 + 3.0 * u(rng);
    const auto k = kernel::transition_kernel(kernel::RcvmParams{tau, nu, 0.0}, dt);
    const auto j = oracle::johnson(tau, nu, dt);
    worst = std::max(worst, std::abs(k.q1 - static_cast<double>(j.q1)) / static_cast<double>(j.q1));
    worst = std::max(worst, std::abs(k.gamma1 - static_cast<double>(j.g1)) / static_cast<double>(j.g1));
  }
  return {worst <= 1e-12, fmt("max relative error %.2e over 100 draws (tol 1e-12)", worst)};
}

// 3: composition of equal segments and the mixed-omega direct sum
Outcome composition() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_eq = 0.0, worst_mixed = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    const kernel::RcvmParams p{0.2 + 3.0 * u(rng), 0.5 + 6.0 * u(rng), 10.0 * (u(rng) - 0.5)};
    const double total = 0.05 + 1.5 * u(rng);
    const auto full = kernel::transition_kernel(p, total);
    for (int n : {2, 5, 20}) {
      std::vector<kernel::KernelStep> segs(static_cast<std::size_t>(n), kernel::KernelStep{p, total / n});
      const auto c = kernel::compose(segs);
      worst_eq = std::max({worst_eq, max_rel(c.T, full.T), max_rel(c.Q, full.Q)});
    }
    const int k = 2 + static_cast<int>(8 * u(rng));
    std::vector<kernel::KernelStep> mixed;
    for (int l = 0; l < k; ++l) {
      mixed.push_back({{p.tau, p.nu, 10.0 * (u(rng) - 0.5)}, 0.01 + 0.3 * u(rng)});
    }
    const auto c = kernel::compose(mixed);
    kernel::Mat4 q = kernel::Mat4::Zero();
    for (std::size_t l = 0; l < mixed.size(); ++l) {
      kernel::Mat4 prod = kernel::Mat4::Identity();
      for (std::size_t m = mixed.size() - 1; m > l; --m) {
        prod = prod * kernel::transition_kernel(mixed[m].params, mixed[m].dt).T;
      }
      q += prod * kernel::transition_kernel(mixed[l].params, mixed[l].dt).Q * prod.transpose();
    }
    worst_mixed = std::max(worst_mixed, max_rel(c.Q, q));
  }
  return {worst_eq <= 1e-10 && worst_mixed <= 1e-12,
          fmt("equal segments %.2e (tol 1e-10), mixed omega vs direct sum %.2e (tol 1e-12)", worst_eq,
              worst_mixed)};
}

// 4: Kalman log-likelihood against the joint Gaussian density
Outcome kalman_oracle() {
  Rng rng = make_rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int draw = 0; draw < 50; ++draw) {
    const double tau = 0.2 + 3.0 * u(rng);
    const double nu = 0.5 + 5.0 * u(rng);
    const double sigma_obs = 0.005 + 0.1 * u(rng);
    Track track;
    track.id = "r";
    std::vector<kernel::CompositeKernel> kernels;
    double t = 0.0;
    Vec2 x(g(rng), g(rng));
    for (int j = 0; j < 5; ++j) {
      track.times.push_back(t);
      track.observations.push_back(x);
      const double dt = 0.05 + 0.5 * u(rng);
      t += dt;
      x += Vec2(g(rng), g(rng)) * nu * std::sqrt(dt);
      if (j < 4) {
        const int k = 1 + static_cast<int>(4 * u(rng));
        std::vector<double> dts(static_cast<std::size_t>(k), dt / k), oms;
        for (int l = 0; l < k; ++l) oms.push_back(4.0 * g(rng));
        kernels.push_back(kernel::compose(tau, nu, dts, oms));
      }
    }
    auto init = ssm::default_initial_state(track, sigma_obs, nu);
    init.mean[2] = 0.3 * g(rng);
    std::vector<oracle::Mat> ts, qs;
    for (const auto& k : kernels) {
      ts.push_back(k.T);
      qs.push_back(k.Q);
    }
    const auto js = oracle::unroll_states(ts, qs, init.mean, init.cov);
    oracle::Vec mean, y(10);
    oracle::Mat cov, cross;
    oracle::observe_positions(js, sigma_obs * sigma_obs, mean, cov, cross);
    for (int j = 0; j < 5; ++j) y.segment(2 * j, 2) = track.observations[static_cast<std::size_t>(j)];
    const double ref = oracle::gaussian_logpdf(y, mean, cov);
    const double ll = ssm::kalman_loglik(kernels, track, ssm::MeasurementModel{sigma_obs}, init).loglik;
    worst = std::max(worst, std::abs(ll - ref));
  }
  return {worst <= 1e-8, fmt("max |difference| %.2e over 50 draws (tol 1e-8)", worst)};
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -INFINITY;
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// 5: Laplace marginal against adaptive Gauss-Hermite quadrature
Outcome laplace_oracle() {
  const double sigma_obs = 0.05;
  Rng rng = make_rng(4);
  crcvm::SimulationConfig sc;
  sc.dt = 0.25;
  sc.n_steps = 29;
  const auto traj = crcvm::simulate_rcvm(1.5, 4.0, 0.0, sc, rng);
  const Dataset data = {crcvm::add_noise(traj, sigma_obs, rng, "toy")};
  inference::ParameterModel model;
  model.sigma_obs = sigma_obs;
  const inference::Problem problem(data, model);
  // sigma_nu tiny: b_nu is pinned, b_tau is the one active random effect
  const double s_tau = 0.6, s_nu = 1e-6;
  inference::ThetaVector th(4);
  th << std::log(1.3), std::log(3.2), std::log(s_tau), std::log(s_nu);
  const double laplace = -problem.laplace_negloglik(th);

  const auto f = [&](double bt, double bn) {
    const double tau = 1.3 * std::exp(bt), nu = 3.2 * std::exp(bn);
    const auto ks = ssm::build_state_space(
        data[0], [&](const Track&, std::size_t) { return tau; }, [&](const Track&, std::size_t) { return nu; });
    const double ll = ssm::kalman_loglik(ks, data[0], ssm::MeasurementModel{sigma_obs},
                                         ssm::default_initial_state(data[0], sigma_obs, nu))
                          .loglik;
    return ll - 0.5 * (bt * bt / (s_tau * s_tau) + bn * bn / (s_nu * s_nu)) -
           std::log(2.0 * std::numbers::pi * s_tau * s_nu);
  };
  double m = 0.0, curv = 1.0;
  for (int it = 0; it < 30; ++it) {
    const double h = 1e-4;
    const double fp = f(m + h, 0.0), f0 = f(m, 0.0), fm = f(m - h, 0.0);
    curv = -(fp - 2 * f0 + fm) / (h * h);
    m += (fp - fm) / (2 * h) / curv;
  }
  const double scale_t = 1.0 / std::sqrt(curv), scale_n = s_nu;
  std::vector<double> x, w, terms;
  oracle::gauss_hermite(31, x, w);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double bt = m + std::sqrt(2.0) * scale_t * x[i];
      const double bn = std::sqrt(2.0) * scale_n * x[j];
      terms.push_back(std::log(w[i] * w[j]) + x[i] * x[i] + x[j] * x[j] + f(bt, bn));
    }
  }
  const double aghq = std::log(2.0 * scale_t * scale_n) + log_sum_exp(terms);
  const double rel = std::abs(laplace - aghq) / std::abs(aghq);
  return {rel <= 1e-3, fmt("laplace %.5f, AGHQ(31) %.5f, relative %.2e (tol 1e-3)", laplace, aghq, rel)};
}

geometry::PolygonDomain fjord() { return io::load_domain(std::string(CCVM_DATA_DIR) + "/fjord.geojson"); }

// 6: desk-scale simulation study, CRCVM with true covariates vs CVM
Outcome desk_study() {
  workflows::StudyConfig cfg;
  cfg.sim.batches = 10;
  cfg.sim.individuals = 6;
  cfg.sim.model = workflows::SimModel::crcvm;
  cfg.sim.tau0 = 1.5;
  cfg.sim.nu0 = 4.0;
  cfg.sim.sigma_tau = 0.2;
  cfg.sim.sigma_nu = 0.1;
  cfg.sim.fine_step = 1.0 / 60.0;
  cfg.sim.obs_interval = 1.0 / 60.0;
  cfg.sim.duration = 12.0;
  cfg.sim.sigma_obs = 0.01;
  cfg.sim.seed = 1;
  cfg.scenarios = {{"crcvm_true", true, workflows::CovariateMode::truth},
                   {"cvm", false, workflows::CovariateMode::truth}};
  cfg.sub_step = 1.0 / 60.0;
  cfg.fit = workflows::fit_options(workflows::RunConfig{});
  cfg.threads = std::max(1u, std::thread::hardware_concurrency());
  const auto res = workflows::run_study(fjord(), cfg);
  const auto& cr = res.summaries.at(0);
  const auto& cv = res.summaries.at(1);
  if (cr.fits == 0 || cv.fits == 0) return {false, "no successful fits"};
  const bool ok = cr.mean[0] >= 1.1 && cr.mean[0] <= 1.8 && cr.mean[1] >= 3.7 && cr.mean[1] <= 4.5 &&
                  cv.mean[0] < 1.1;
  std::ostringstream os;
  os << fmt("CRCVM tau0 %.3f [1.1, 1.8], nu0 %.3f [3.7, 4.5]; CVM tau0 %.3f (< 1.1), nu0 %.3f", cr.mean[0],
            cr.mean[1], cv.mean[0], cv.mean[1])
     << "; batches " << res.batches_used << " used, " << res.batches_discarded << " discarded; fits "
     << cr.fits << "+" << cv.fits << ", failures " << cr.failures << "+" << cv.failures;
  return {ok, os.str()};
}

// 7: recovery distances from the published slopes
Outcome recovery_reproduction() {
  const auto rows = workflows::recovery_table({-3.24, -4.67, -1.70}, {1.10, 0.49, 1.68}, {0.5, 0.3, 0.1});
  // tau rows then nu rows, p = 0.5, 0.3, 0.1: estimate, lo, hi
  const double expected[6][3] = {{4.7, 2.5, 6.7},  {9.1, 4.8, 13.1}, {30.7, 16.1, 44.3},
                                 {2.7, 1.2, 4.1},  {4.2, 1.9, 6.4},  {11.6, 5.2, 17.6}};
  double worst = 0.0;
  for (std::size_t r = 0; r < 6; ++r) {
    const auto& row = rows.at(r).row;
    worst = std::max({worst, std::abs(row.estimate - expected[r][0]), std::abs(row.lo - expected[r][1]),
                      std::abs(row.hi - expected[r][2])});
  }
  return {worst <= 0.1 + 1e-12, fmt("max |cell - table| %.3f km over 18 cells (tol 0.1)", worst)};
}

// 8: land-hit rate of 1-day trajectories, tau 2 h, nu 4 km/h, 10 s steps
Outcome land_rate() {
  workflows::SimulateConfig cfg;  // defaults: tau 2 h, nu 4 km/h, 10 s steps
  cfg.duration = 24.0;
  cfg.individuals = 6;
  cfg.seed = 2;
  const auto domain = fjord();
  std::size_t hits = 0, total = 0;
  for (std::size_t rep = 0; rep < 20; ++rep) {
    const auto b = workflows::simulate_batch(domain, cfg, rep);
    for (const auto& ind : b.individuals) {
      hits += ind.fine.hit_land();
      ++total;
    }
  }
  const double rate = static_cast<double>(hits) / static_cast<double>(total);
  return {rate <= 0.05, fmt("%.0f of %.0f trajectories hit land (%.2f%%, limit 5%%)", hits, total, 100 * rate)};
}

// 9: geometry property suite
Outcome geometry_properties() {
  Rng rng = make_rng(909);
  const auto fj = fjord();
  const auto rd = props::random_domain(rng);
  int nearest = 0, theta = 0, los = 0, extra = 0;
  for (const auto* d : {&fj, &rd}) {
    nearest += props::nearest_failures(*d, 1000, rng);
    theta += props::theta_failures(*d, 1000, rng);
    los += props::los_failures(*d, 1000, rng);
    extra += props::reflection_failures(*d, 1000, rng) + props::rotation_failures(*d, 1000, rng) +
             props::los_symmetry_failures(*d, 1000, rng);
  }
  const bool ok = nearest == 0 && theta == 0 && los == 0 && extra == 0;
  return {ok, fmt("failures: nearest %.0f, theta %.0f, line of sight %.0f, invariants %.0f (1000 cases per "
                  "property and domain)",
                  nearest, theta, los, extra)};
}

Outcome real_data_note() {
  Outcome o;
  o.pass = true;
  o.informational = true;
  o.detail = "real-data estimates are not reproducible without the dataset; covered by criterion 7 and the "
             "known-slope recovery tests";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"kernel exactness (Euler Monte Carlo)", kernel_exactness},
      {"omega = 0 reduction", johnson_reduction},
      {"composition exactness", composition},
      {"Kalman vs joint Gaussian", kalman_oracle},
      {"Laplace vs adaptive Gauss-Hermite", laplace_oracle},
      {"desk-scale simulation study", desk_study},
      {"recovery distances", recovery_reproduction},
      {"land-hit rate", land_rate},
      {"geometry properties", geometry_properties},
      {"real-data estimates", real_data_note},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const int id = static_cast<int>(c) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = o.informational ? "INFO" : (o.pass ? "PASS" : "FAIL");
    std::printf("criterion %2d %s  %s: %s [%.1f s]\n", id, tag, criteria[c].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
