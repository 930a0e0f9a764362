#pragma once
// Randomized geometry properties checked against brute-force references.
// Each function returns the number of failing cases.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "ccvm/geometry.hpp"
#include "ccvm/random.hpp"
#include "ccvm/smoothing.hpp"

namespace props {

using ccvm::Vec2;
using ccvm::geometry::PolygonDomain;

/// Star-shaped simple polygon around c, with n vertices.
inline std::vector<Vec2> star_ring(const Vec2& c, double r_min, double r_max, int n, ccvm::Rng& rng) {
  std::uniform_real_distribution<double> ur(r_min, r_max);
  std::vector<Vec2> ring;
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * std::numbers::pi * k / n;
    const double r = ur(rng);
    ring.emplace_back(c.x() + r * std::cos(a), c.y() + r * std::sin(a));
  }
  return ring;
}

/// Star-shaped outer ring with a small star-shaped hole near its centre.
inline PolygonDomain random_domain(ccvm::Rng& rng) {
  std::uniform_int_distribution<int> nv(5, 40);
  auto outer = star_ring(Vec2(0, 0), 6.0, 12.0, nv(rng), rng);
  auto hole = star_ring(Vec2(0.5, -0.3), 1.0, 2.5, nv(rng), rng);
  return PolygonDomain({{outer, hole}});
}

inline Vec2 random_point(const PolygonDomain& d, ccvm::Rng& rng, double margin = 1.0) {
  std::uniform_real_distribution<double> ux(d.min_corner().x() - margin, d.max_corner().x() + margin);
  std::uniform_real_distribution<double> uy(d.min_corner().y() - margin, d.max_corner().y() + margin);
  return Vec2(ux(rng), uy(rng));
}

inline double brute_distance(const PolygonDomain& d, const Vec2& p) {
  double best = INFINITY;
  for (const auto& s : d.segments()) {
    const Vec2 ab = s.b - s.a;
    double t = (p - s.a).dot(ab) / ab.squaredNorm();
    t = std::min(1.0, std::max(0.0, t));
    best = std::min(best, (p - (s.a + t * ab)).norm());
  }
  return best;
}

/// Nearest boundary point via the index vs an exhaustive scan (1e-9 km).
inline int nearest_failures(const PolygonDomain& d, int cases, ccvm::Rng& rng) {
  int fails = 0;
  for (int i = 0; i < cases; ++i) {
    const Vec2 p = random_point(d, rng);
    const auto np = ccvm::geometry::nearest_boundary_point(d, p);
    const double ref = brute_distance(d, p);
    if (std::abs(np.distance - ref) > 1e-9 || std::abs((p - np.point).norm() - np.distance) > 1e-12) ++fails;
  }
  return fails;
}

/// Velocity along the normal gives theta = 0, against it pi, and the two
/// shore-parallel directions give +-pi/2; all exact.
inline int theta_failures(const PolygonDomain& d, int cases, ccvm::Rng& rng) {
  int fails = 0;
  std::uniform_real_distribution<double> speed(0.1, 20.0);
  for (int i = 0; i < cases; ++i) {
    Vec2 p;
    do {
      p = random_point(d, rng, 0.0);
    } while (!ccvm::geometry::contains(d, p));
    const double s = speed(rng);
    const auto m0 = ccvm::geometry::boundary_metrics(d, p, Vec2(1, 0));
    const Vec2 n = m0.normal;
    const Vec2 t(-n.y(), n.x());
    const double th_along = ccvm::geometry::boundary_metrics(d, p, s * n).theta;
    const double th_back = ccvm::geometry::boundary_metrics(d, p, -s * n).theta;
    const double th_left = ccvm::geometry::boundary_metrics(d, p, s * t).theta;
    const double th_right = ccvm::geometry::boundary_metrics(d, p, -s * t).theta;
    if (th_along != 0.0 || th_back != std::numbers::pi || th_left != std::numbers::pi / 2 ||
        th_right != -std::numbers::pi / 2) {
      ++fails;
    }
  }
  return fails;
}

// Independent segment predicate in long double.
inline int orient_ld(const Vec2& p, const Vec2& q, const Vec2& r) {
  const long double v = (static_cast<long double>(q.x()) - p.x()) * (static_cast<long double>(r.y()) - p.y()) -
                        (static_cast<long double>(q.y()) - p.y()) * (static_cast<long double>(r.x()) - p.x());
  return (v > 0) - (v < 0);
}

inline bool blocked_brute(const PolygonDomain& d, const Vec2& a, const Vec2& b) {
  for (const auto& s : d.segments()) {
    const int o1 = orient_ld(a, b, s.a);
    const int o2 = orient_ld(a, b, s.b);
    const int o3 = orient_ld(s.a, s.b, a);
    const int o4 = orient_ld(s.a, s.b, b);
    if (o1 * o2 < 0 && o3 * o4 < 0) return true;
    // a vertex lying strictly inside the sight line also blocks it
    for (const Vec2& v : {s.a, s.b}) {
      if (orient_ld(a, b, v) == 0) {
        const double t = (v - a).dot(b - a) / (b - a).squaredNorm();
        if (t > 0.0 && t < 1.0) return true;
      }
    }
  }
  return false;
}

inline int los_failures(const PolygonDomain& d, int cases, ccvm::Rng& rng) {
  int fails = 0;
  for (int i = 0; i < cases; ++i) {
    const Vec2 a = random_point(d, rng, 0.0);
    const Vec2 b = random_point(d, rng, 0.0);
    if (ccvm::geometry::line_of_sight(d, a, b) == blocked_brute(d, a, b)) ++fails;
  }
  return fails;
}

inline int los_symmetry_failures(const PolygonDomain& d, int cases, ccvm::Rng& rng) {
  int fails = 0;
  for (int i = 0; i < cases; ++i) {
    const Vec2 a = random_point(d, rng, 0.0);
    const Vec2 b = random_point(d, rng, 0.0);
    if (ccvm::geometry::line_of_sight(d, a, b) != ccvm::geometry::line_of_sight(d, b, a)) ++fails;
  }
  return fails;
}

inline Vec2 water_point(const PolygonDomain& d, ccvm::Rng& rng) {
  Vec2 p;
  do {
    p = random_point(d, rng, 0.0);
  } while (!ccvm::geometry::contains(d, p));
  return p;
}

/// theta(v) = -theta(v reflected across the normal), up to the wrap at pi.
inline int reflection_failures(const PolygonDomain& d, int cases, ccvm::Rng& rng) {
  int fails = 0;
  std::normal_distribution<double> nv(0.0, 5.0);
  for (int i = 0; i < cases; ++i) {
    const Vec2 p = water_point(d, rng);
    const Vec2 v(nv(rng), nv(rng));
    const auto m = ccvm::geometry::boundary_metrics(d, p, v);
    const Vec2 r = 2.0 * v.dot(m.normal) * m.normal - v;
    const double th = ccvm::geometry::boundary_metrics(d, p, r).theta;
    double diff = std::abs(m.theta + th);
    diff = std::min(diff, std::abs(diff - 2.0 * std::numbers::pi));
    if (diff > 1e-12) ++fails;
  }
  return fails;
}

/// Rotating domain and query together leaves d_shore unchanged and rotates
/// the nearest point (1e-9 km).
inline int rotation_failures(const PolygonDomain& d, int cases, ccvm::Rng& rng) {
  std::uniform_real_distribution<double> ua(-std::numbers::pi, std::numbers::pi);
  const double a = ua(rng);
  Eigen::Matrix2d rot;
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  // each ring as its own polygon: same segments in the same order, which is
  // all the nearest-point search sees
  std::vector<std::vector<std::vector<Vec2>>> polys;
  for (const auto& ring : d.rings()) {
    std::vector<Vec2> rr;
    for (const Vec2& v : ring) rr.push_back(rot * v);
    polys.push_back({rr});
  }
  const PolygonDomain rd(polys);
  int fails = 0;
  for (int i = 0; i < cases; ++i) {
    const Vec2 p = random_point(d, rng);
    const auto n0 = ccvm::geometry::nearest_boundary_point(d, p);
    const auto n1 = ccvm::geometry::nearest_boundary_point(rd, rot * p);
    if (std::abs(n0.distance - n1.distance) > 1e-9 || (rot * n0.point - n1.point).norm() > 1e-9) ++fails;
  }
  return fails;
}

/// Smoothed covariate grids against metrics recomputed at each grid time from
/// the smoothed positions with an exhaustive nearest-segment scan.
inline int grid_recompute_failures(const ccvm::Track& track, const PolygonDomain& d, double sub_step) {
  const ccvm::geometry::SmoothingOptions opts;
  const auto grids = ccvm::geometry::interpolate_covariates(track, d, sub_step, opts);
  const auto st = ccvm::geometry::smooth_track(track, opts.grid_step, opts.penalty);
  int fails = 0;
  for (const auto& g : grids) {
    for (std::size_t l = 0; l < g.times.size(); ++l) {
      const Vec2 p = st.position_at(g.times[l]);
      const Vec2 v = ccvm::geometry::empirical_velocity(st, g.times[l]);
      double best = INFINITY;
      Vec2 q(0, 0);
      for (const auto& s : d.segments()) {
        const Vec2 ab = s.b - s.a;
        const double t = std::clamp((p - s.a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
        const Vec2 c = s.a + t * ab;
        if ((p - c).norm() < best) {
          best = (p - c).norm();
          q = c;
        }
      }
      const Vec2 n = (p - q) / best;
      const double th = std::atan2(n.x() * v.y() - n.y() * v.x(), n.dot(v));
      double dth = std::abs(th - g.theta[l]);
      dth = std::min(dth, std::abs(dth - 2.0 * std::numbers::pi));
      if (std::abs(best - g.d_shore[l]) > 1e-9 || dth > 1e-9) ++fails;
    }
  }
  return fails;
}

}  // namespace props
