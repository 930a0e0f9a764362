#include <doctest.h>

#include <cmath>

#include "ccvm/errors.hpp"
#include "ccvm/io.hpp"
#include "ccvm/smoothing.hpp"
#include "geometry_props.hpp"

using namespace ccvm;
using namespace ccvm::geometry;

namespace {

const std::vector<double> kT = {0, 0.3, 0.7, 1.0, 1.6, 2.0, 2.2, 3.1};
const std::vector<double> kY = {0.0, 0.5, 0.2, 1.1, 0.9, 1.8, 1.5, 2.4};

Track line_track() {
  Track t;
  t.id = "line";
  for (int j = 0; j < 10; ++j) {
    t.times.push_back(0.1 * j);
    t.observations.emplace_back(2.0 + 3.0 * 0.1 * j, 1.0 - 1.0 * 0.1 * j);
  }
  return t;
}

}  // namespace

TEST_CASE("smoothing spline matches an independent penalized-spline solver") {
  // reference values from scipy.interpolate.make_smoothing_spline(t, y, lam)
  const std::vector<double> at = {0, 0.5, 1.3, 2.1, 3.1};
  const auto a = smoothing_spline(kT, kY, 0.01, at);
  const double ref_a[] = {0.06687380161551576, 0.40464340599360726, 0.9699227823244279, 1.5927436887980393,
                          2.393778588181288};
  const auto b = smoothing_spline(kT, kY, 1.0, at);
  const double ref_b[] = {0.05920128603920316, 0.4137613521040672, 0.9884225740203451, 1.5859404380258264,
                          2.3604630254402155};
  for (std::size_t i = 0; i < at.size(); ++i) {
    CHECK(a[i] == doctest::Approx(ref_a[i]).epsilon(1e-9));
    CHECK(b[i] == doctest::Approx(ref_b[i]).epsilon(1e-9));
  }
}

TEST_CASE("smoothing spline limits") {
  // zero penalty interpolates
  const auto g = smoothing_spline(kT, kY, 0.0, kT);
  for (std::size_t i = 0; i < kT.size(); ++i) CHECK(g[i] == doctest::Approx(kY[i]).epsilon(1e-10));

  // huge penalty gives the least-squares line
  double st = 0, sy = 0, stt = 0, sty = 0;
  const double n = static_cast<double>(kT.size());
  for (std::size_t i = 0; i < kT.size(); ++i) {
    st += kT[i];
    sy += kY[i];
    stt += kT[i] * kT[i];
    sty += kT[i] * kY[i];
  }
  const double slope = (n * sty - st * sy) / (n * stt - st * st);
  const double icpt = (sy - slope * st) / n;
  const auto l = smoothing_spline(kT, kY, 1e10, {0.0, 1.5, 3.1});
  CHECK(l[0] == doctest::Approx(icpt).epsilon(1e-6));
  CHECK(l[1] == doctest::Approx(icpt + 1.5 * slope).epsilon(1e-6));

  // linear data are reproduced for any penalty, including extrapolation
  std::vector<double> lin;
  for (double t : kT) lin.push_back(1.0 - 2.0 * t);
  const auto r = smoothing_spline(kT, lin, 3.0, {-0.5, 0.35, 3.5});
  CHECK(r[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(r[1] == doctest::Approx(0.3).epsilon(1e-10));
  CHECK(r[2] == doctest::Approx(-6.0).epsilon(1e-10));

  CHECK_THROWS_AS(smoothing_spline({0, 1, 2}, {0, 1, 2}, 1.0, {0.5}), InputError);
  CHECK_THROWS_AS(smoothing_spline({0, 1, 1, 2}, {0, 1, 2, 3}, 1.0, {0.5}), InputError);
}

TEST_CASE("smoothed track grid and velocities") {
  const Track t = line_track();
  const auto s = smooth_track(t, 1.0 / 60.0, 1.0);
  CHECK(s.grid_times.front() == t.times.front());
  CHECK(s.grid_times.back() >= t.times.back() + s.grid_step - 1e-12);
  for (std::size_t k = 1; k < s.grid_times.size(); ++k) {
    CHECK(s.grid_times[k] - s.grid_times[k - 1] == doctest::Approx(1.0 / 60.0));
  }
  for (std::size_t j = 0; j < t.size(); ++j) {
    CHECK((s.position_at(t.times[j]) - t.observations[j]).norm() < 1e-9);
    CHECK((empirical_velocity(s, t.times[j]) - Vec2(3.0, -1.0)).norm() < 1e-8);
  }
  CHECK_THROWS_AS(s.position_at(-1.0), InputError);

  Track short_track = t;
  short_track.times.resize(3);
  short_track.observations.resize(3);
  CHECK_THROWS_AS(smooth_track(short_track, 0.1, 1.0), InputError);
}

TEST_CASE("interval grids") {
  auto g = interval_grid_times(1.0, 2.0, 0.25);
  REQUIRE(g.size() == 5);
  CHECK(g.front() == 1.0);
  CHECK(g.back() == 2.0);
  CHECK(g[2] == doctest::Approx(1.5));
  g = interval_grid_times(1.0, 1.1, 0.25);
  CHECK(g.size() == 2);
  g = interval_grid_times(0.0, 1.0, 0.3);
  CHECK(g.size() == 5);
  CHECK_THROWS_AS(interval_grid_times(1.0, 1.0, 0.1), InputError);
  CHECK_THROWS_AS(interval_grid_times(0.0, 1.0, 0.0), InputError);
}

TEST_CASE("covariate interpolation from observed and smoothed positions") {
  const PolygonDomain d({{{{0, 0}, {10, 0}, {10, 10}, {0, 10}}}});
  Track t = line_track();
  for (auto src : {CovariateSource::observed, CovariateSource::smoothed}) {
    const auto grids = interpolate_covariates(t, d, 1.0 / 30.0, {}, src);
    REQUIRE(grids.size() == t.size() - 1);
    for (std::size_t j = 0; j < grids.size(); ++j) {
      CHECK(grids[j].times.front() == t.times[j]);
      CHECK(grids[j].times.back() == t.times[j + 1]);
      CHECK(grids[j].d_shore.size() == grids[j].times.size());
      // the line heads to (5, 0.1): nearest shore is the bottom edge, y
      CHECK(grids[j].d_shore.front() == doctest::Approx(t.observations[j].y()).epsilon(1e-6));
      // velocity (3, -1) against normal (0, 1)
      CHECK(grids[j].theta.front() == doctest::Approx(std::atan2(-3.0, -1.0)).epsilon(1e-6));
    }
  }
}

TEST_CASE("five-minute interval at one-minute sub-steps has six grid points") {
  const auto g = interval_grid_times(0.5, 0.5 + 5.0 / 60.0, 1.0 / 60.0);
  REQUIRE(g.size() == 6);
  CHECK(g.front() == 0.5);
  CHECK(g.back() == 0.5 + 5.0 / 60.0);
  for (std::size_t l = 1; l < g.size(); ++l) CHECK(g[l] - g[l - 1] <= 1.0 / 60.0 + 1e-15);
}

TEST_CASE("covariate grids equal metrics recomputed with an exhaustive scan") {
  const PolygonDomain d({{{{0, 0}, {10, 0}, {10, 10}, {0, 10}}, {{4, 4}, {4, 6}, {6, 6}, {6, 4}}}});
  Rng rng = make_rng(8);
  std::normal_distribution<double> noise(0.0, 0.02);
  Track t;
  t.id = "loop";
  for (int j = 0; j < 40; ++j) {
    const double a = 0.3 * j;
    t.times.push_back(0.05 * j + (j % 3) * 0.01);
    t.observations.emplace_back(5.0 + 3.0 * std::cos(a) + noise(rng), 5.0 + 3.0 * std::sin(a) + noise(rng));
  }
  CHECK(props::grid_recompute_failures(t, d, 1.0 / 60.0) == 0);
  CHECK(props::grid_recompute_failures(t, d, 0.013) == 0);

  // far from any shore every D_shore is positive and finite
  for (const auto& g : interpolate_covariates(t, d, 1.0 / 60.0)) {
    for (double v : g.d_shore) CHECK((std::isfinite(v) && v > 0.0));
  }
}
