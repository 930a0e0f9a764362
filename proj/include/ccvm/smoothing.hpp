#pragma once

#include <string>
#include <vector>

#include "ccvm/geometry.hpp"
#include "ccvm/track.hpp"

namespace ccvm::geometry {

struct SmoothingOptions {
  double grid_step = 1.0 / 60.0;  // h; also the empirical-velocity lag
  double penalty = 1.0;           // lambda in (km, h) units
};

/// Penalized cubic smoothing spline of a track, tabulated on a uniform grid.
/// The grid starts at the first observation and extends at least one step
/// past the last one, so forward differences exist at every observation.
struct SmoothedTrack {
  std::string source_track_id;
  double grid_step = 0.0;
  std::vector<double> grid_times;
  std::vector<Vec2> positions;

  /// Linear interpolation between grid nodes. Throws InputError outside the grid.
  Vec2 position_at(double t) const;
};

/// Natural cubic smoothing spline through (times, values) minimizing
/// sum (y - g(t))^2 + penalty * int g''^2, evaluated at `at` (linear
/// extrapolation beyond the end knots). Requires >= 4 strictly increasing knots.
std::vector<double> smoothing_spline(const std::vector<double>& times,
                                     const std::vector<double>& values, double penalty,
                                     const std::vector<double>& at);

SmoothedTrack smooth_track(const Track& track, double grid_step, double penalty);

/// Forward difference (y(t + d) - y(t)) / d with d = grid step.
Vec2 empirical_velocity(const SmoothedTrack& smoothed, double t);

/// Refined time grid for one observation interval: k = ceil(len / sub_step)
/// equal sub-steps, endpoints exact.
std::vector<double> interval_grid_times(double t0, double t1, double sub_step);

enum class CovariateSource { smoothed, observed };

/// Boundary covariates on each observation interval's refined grid.
/// `smoothed` evaluates the spline-smoothed trajectory and its empirical
/// velocity; `observed` interpolates the raw positions linearly and uses the
/// interval's raw displacement as velocity.
std::vector<IntervalGrid> interpolate_covariates(const Track& track, const PolygonDomain& domain,
                                                 double sub_step,
                                                 const SmoothingOptions& smoothing = {},
                                                 CovariateSource source = CovariateSource::smoothed);

}  // namespace ccvm::geometry
