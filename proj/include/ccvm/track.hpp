#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

namespace ccvm {

using Vec2 = Eigen::Vector2d;

/// Boundary covariates on the refined time grid of one observation interval.
/// times.front() and times.back() coincide with the bracketing observation times.
struct IntervalGrid {
  std::vector<double> times;
  std::vector<double> d_shore;
  std::vector<double> theta;
};

/// One individual's irregularly sampled, noisy 2-D positions (km, hours).
struct Track {
  std::string id;
  std::vector<double> times;
  std::vector<Vec2> observations;
  /// Named per-observation channels, e.g. "E_ship". Same length as times.
  std::map<std::string, std::vector<double>> covariates;
  /// One grid per observation interval (times.size() - 1 entries) once built.
  std::vector<IntervalGrid> grids;

  std::size_t size() const { return times.size(); }

  /// Value of a covariate channel at observation j; 0 when the channel is
  /// absent or the entry is not finite.
  double covariate_or_zero(const std::string& name, std::size_t j) const;

  /// Throws InputError unless times are strictly increasing and all
  /// observations are finite.
  void validate() const;
};

using Dataset = std::vector<Track>;

}  // namespace ccvm
