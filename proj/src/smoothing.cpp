#include "ccvm/smoothing.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>

#include "ccvm/errors.hpp"

namespace ccvm::geometry {
namespace {

constexpr double kTimeTol = 1e-9;

}  // namespace

std::vector<double> smoothing_spline(const std::vector<double>& times,
                                     const std::vector<double>& values, double penalty,
                                     const std::vector<double>& at) {
  const std::size_t n = times.size();
  if (n < 4) throw InputError("smoothing spline needs at least 4 observations");
  if (values.size() != n) throw InputError("smoothing spline: times/values length mismatch");
  if (!(penalty >= 0.0)) throw InputError("smoothing penalty must be >= 0");
  std::vector<double> h(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = times[i + 1] - times[i];
    if (!(h[i] > 0.0)) throw InputError("smoothing spline: times not strictly increasing");
  }

  // Reinsch form: (R + penalty Q'Q) gamma = Q'y, g = y - penalty Q gamma.
  const auto m = static_cast<Eigen::Index>(n - 2);
  Eigen::SparseMatrix<double> q(static_cast<Eigen::Index>(n), m);
  Eigen::SparseMatrix<double> r(m, m);
  std::vector<Eigen::Triplet<double>> qt;
  std::vector<Eigen::Triplet<double>> rt;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double h0 = h[static_cast<std::size_t>(j)];
    const double h1 = h[static_cast<std::size_t>(j) + 1];
    qt.emplace_back(j, j, 1.0 / h0);
    qt.emplace_back(j + 1, j, -1.0 / h0 - 1.0 / h1);
    qt.emplace_back(j + 2, j, 1.0 / h1);
    rt.emplace_back(j, j, (h0 + h1) / 3.0);
    if (j + 1 < m) {
      rt.emplace_back(j, j + 1, h1 / 6.0);
      rt.emplace_back(j + 1, j, h1 / 6.0);
    }
  }
  q.setFromTriplets(qt.begin(), qt.end());
  r.setFromTriplets(rt.begin(), rt.end());

  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = values[i];

  Eigen::SparseMatrix<double> lhs = r;
  if (penalty > 0.0) lhs += penalty * Eigen::SparseMatrix<double>(q.transpose() * q);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(lhs);
  if (solver.info() != Eigen::Success) throw NumericalError("smoothing spline system is singular");
  const Eigen::VectorXd gamma_inner = solver.solve(q.transpose() * y);
  const Eigen::VectorXd g = y - penalty * (q * gamma_inner);

  std::vector<double> gamma(n, 0.0);
  for (Eigen::Index j = 0; j < m; ++j) gamma[static_cast<std::size_t>(j) + 1] = gamma_inner[j];

  const double slope_first = (g[1] - g[0]) / h[0] - h[0] * gamma[1] / 6.0;
  const double slope_last = (g[static_cast<Eigen::Index>(n) - 1] - g[static_cast<Eigen::Index>(n) - 2]) / h[n - 2] +
                            h[n - 2] * gamma[n - 2] / 6.0;

  std::vector<double> out;
  out.reserve(at.size());
  for (double t : at) {
    if (t <= times.front()) {
      out.push_back(g[0] - (times.front() - t) * slope_first);
      continue;
    }
    if (t >= times.back()) {
      out.push_back(g[static_cast<Eigen::Index>(n) - 1] + (t - times.back()) * slope_last);
      continue;
    }
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
    const double hi = h[i];
    const double a = t - times[i];
    const double b = times[i + 1] - t;
    const double gi = g[static_cast<Eigen::Index>(i)];
    const double gj = g[static_cast<Eigen::Index>(i) + 1];
    out.push_back((a * gj + b * gi) / hi -
                  a * b / 6.0 * ((1.0 + a / hi) * gamma[i + 1] + (1.0 + b / hi) * gamma[i]));
  }
  return out;
}

Vec2 SmoothedTrack::position_at(double t) const {
  if (grid_times.empty()) throw InputError("empty smoothed track");
  const double t0 = grid_times.front();
  const double t1 = grid_times.back();
  if (t < t0 - kTimeTol || t > t1 + kTimeTol) {
    throw InputError("time outside the smoothed grid of track " + source_track_id);
  }
  if (grid_times.size() == 1) return positions.front();
  const double u = std::clamp((t - t0) / grid_step, 0.0, static_cast<double>(grid_times.size() - 1));
  const auto i = std::min(static_cast<std::size_t>(u), grid_times.size() - 2);
  const double w = std::clamp((t - grid_times[i]) / (grid_times[i + 1] - grid_times[i]), 0.0, 1.0);
  if (w == 0.0) return positions[i];
  if (w == 1.0) return positions[i + 1];
  return (1.0 - w) * positions[i] + w * positions[i + 1];
}

SmoothedTrack smooth_track(const Track& track, double grid_step, double penalty) {
  track.validate();
  if (track.size() < 4) throw InputError("track " + track.id + " has fewer than 4 observations");
  if (!(grid_step > 0.0)) throw InputError("grid step must be positive");
  const double t0 = track.times.front();
  const double span = track.times.back() - t0;
  const auto steps = static_cast<std::size_t>(std::ceil(span / grid_step - kTimeTol)) + 1;

  SmoothedTrack out;
  out.source_track_id = track.id;
  out.grid_step = grid_step;
  out.grid_times.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) out.grid_times[k] = t0 + static_cast<double>(k) * grid_step;

  std::vector<double> xs(track.size());
  std::vector<double> ys(track.size());
  for (std::size_t j = 0; j < track.size(); ++j) {
    xs[j] = track.observations[j].x();
    ys[j] = track.observations[j].y();
  }
  const auto gx = smoothing_spline(track.times, xs, penalty, out.grid_times);
  const auto gy = smoothing_spline(track.times, ys, penalty, out.grid_times);
  out.positions.resize(out.grid_times.size());
  for (std::size_t k = 0; k < out.grid_times.size(); ++k) out.positions[k] = Vec2(gx[k], gy[k]);
  return out;
}

Vec2 empirical_velocity(const SmoothedTrack& smoothed, double t) {
  const double d = smoothed.grid_step;
  if (smoothed.grid_times.empty() || t < smoothed.grid_times.front() - kTimeTol ||
      t + d > smoothed.grid_times.back() + kTimeTol) {
    throw InputError("empirical velocity requested outside the smoothed grid");
  }
  return (smoothed.position_at(std::min(t + d, smoothed.grid_times.back())) -
          smoothed.position_at(t)) /
         d;
}

std::vector<double> interval_grid_times(double t0, double t1, double sub_step) {
  if (!(sub_step > 0.0)) throw InputError("sub-step must be positive");
  if (!(t1 > t0)) throw InputError("interval must have positive length");
  const double len = t1 - t0;
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / sub_step - kTimeTol)));
  std::vector<double> out(k + 1);
  for (std::size_t l = 0; l < k; ++l) out[l] = t0 + len * static_cast<double>(l) / static_cast<double>(k);
  out[k] = t1;
  return out;
}

std::vector<IntervalGrid> interpolate_covariates(const Track& track, const PolygonDomain& domain,
                                                 double sub_step, const SmoothingOptions& smoothing,
                                                 CovariateSource source) {
  track.validate();
  if (!(sub_step > 0.0)) throw InputError("sub-step must be positive");
  std::vector<IntervalGrid> grids;
  if (track.size() < 2) return grids;
  grids.reserve(track.size() - 1);

  if (source == CovariateSource::smoothed) {
    const SmoothedTrack st = smooth_track(track, smoothing.grid_step, smoothing.penalty);
    for (std::size_t j = 0; j + 1 < track.size(); ++j) {
      IntervalGrid g;
      g.times = interval_grid_times(track.times[j], track.times[j + 1], sub_step);
      for (double t : g.times) {
        const auto m = boundary_metrics(domain, st.position_at(t), empirical_velocity(st, t));
        g.d_shore.push_back(m.d_shore);
        g.theta.push_back(m.theta);
      }
      grids.push_back(std::move(g));
    }
    return grids;
  }

  for (std::size_t j = 0; j + 1 < track.size(); ++j) {
    IntervalGrid g;
    const double t0 = track.times[j];
    const double t1 = track.times[j + 1];
    const Vec2& y0 = track.observations[j];
    const Vec2& y1 = track.observations[j + 1];
    const Vec2 v = (y1 - y0) / (t1 - t0);
    g.times = interval_grid_times(t0, t1, sub_step);
    for (double t : g.times) {
      const double w = (t - t0) / (t1 - t0);
      const auto m = boundary_metrics(domain, (1.0 - w) * y0 + w * y1, v);
      g.d_shore.push_back(m.d_shore);
      g.theta.push_back(m.theta);
    }
    grids.push_back(std::move(g));
  }
  return grids;
}

}  // namespace ccvm::geometry
