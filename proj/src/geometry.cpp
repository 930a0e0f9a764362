#include "ccvm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ccvm/errors.hpp"

namespace ccvm::geometry {
namespace {

double cross(const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); }

int orientation(const Vec2& p, const Vec2& q, const Vec2& r) {
  const double o = cross(q - p, r - p);
  return (o > 0.0) - (o < 0.0);
}

// r is collinear with [p, q]; is it inside the closed box of the segment?
bool within_box(const Vec2& p, const Vec2& q, const Vec2& r) {
  return r.x() >= std::min(p.x(), q.x()) && r.x() <= std::max(p.x(), q.x()) &&
         r.y() >= std::min(p.y(), q.y()) && r.y() <= std::max(p.y(), q.y());
}

bool closed_segments_intersect(const Vec2& p1, const Vec2& q1, const Vec2& p2, const Vec2& q2) {
  const int o1 = orientation(p1, q1, p2);
  const int o2 = orientation(p1, q1, q2);
  const int o3 = orientation(p2, q2, p1);
  const int o4 = orientation(p2, q2, q1);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && within_box(p1, q1, p2)) return true;
  if (o2 == 0 && within_box(p1, q1, q2)) return true;
  if (o3 == 0 && within_box(p2, q2, p1)) return true;
  if (o4 == 0 && within_box(p2, q2, q1)) return true;
  return false;
}

std::vector<Vec2> normalize_ring(const std::vector<Vec2>& raw, std::size_t ring_id) {
  std::vector<Vec2> ring;
  ring.reserve(raw.size() + 1);
  for (const auto& v : raw) {
    if (!v.allFinite()) {
      throw InputError("ring " + std::to_string(ring_id) + " has a non-finite vertex");
    }
    if (ring.empty() || ring.back() != v) ring.push_back(v);
  }
  while (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
  if (ring.size() < 3) {
    throw InputError("ring " + std::to_string(ring_id) + " has fewer than 3 distinct vertices");
  }
  ring.push_back(ring.front());
  return ring;
}

void check_simple(const std::vector<Vec2>& ring, std::size_t ring_id) {
  const std::size_t n = ring.size() - 1;  // number of edges
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      const Vec2& a1 = ring[i];
      const Vec2& b1 = ring[i + 1];
      const Vec2& a2 = ring[j];
      const Vec2& b2 = ring[j + 1];
      if (adjacent) {
        // Adjacent edges share one vertex; they may only overlap if they fold back.
        const Vec2& shared = (j == i + 1) ? b1 : a1;
        const Vec2& u = (j == i + 1) ? a1 : b1;
        const Vec2& w = (j == i + 1) ? b2 : a2;
        if (orientation(shared, u, w) == 0 && (u - shared).dot(w - shared) > 0.0 && n > 3) {
          std::ostringstream msg;
          msg << "ring " << ring_id << " folds back on itself at vertex " << ((j == i + 1) ? j : i);
          throw InputError(msg.str());
        }
        continue;
      }
      if (closed_segments_intersect(a1, b1, a2, b2)) {
        std::ostringstream msg;
        msg << "ring " << ring_id << " self-intersects (edges " << i << " and " << j << ")";
        throw InputError(msg.str());
      }
    }
  }
}

}  // namespace

PolygonDomain::PolygonDomain(std::vector<std::vector<std::vector<Vec2>>> polygons) {
  if (polygons.empty()) throw InputError("domain has no polygons");
  polygon_count_ = polygons.size();
  for (const auto& poly : polygons) {
    if (poly.empty()) throw InputError("polygon without an outer ring");
    for (const auto& raw : poly) {
      const std::size_t id = rings_.size();
      auto ring = normalize_ring(raw, id);
      check_simple(ring, id);
      rings_.push_back(std::move(ring));
    }
  }
  for (std::size_t r = 0; r < rings_.size(); ++r) {
    const auto& ring = rings_[r];
    for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
      segments_.push_back(Segment{ring[k], ring[k + 1], r, k});
    }
  }
  build_index();
}

void PolygonDomain::build_index() {
  lo_ = Vec2::Constant(std::numeric_limits<double>::infinity());
  hi_ = -lo_;
  for (const auto& ring : rings_) {
    for (const auto& v : ring) {
      lo_ = lo_.cwiseMin(v);
      hi_ = hi_.cwiseMax(v);
    }
  }
  const Vec2 extent = (hi_ - lo_).cwiseMax(1e-9);
  const double area = extent.x() * extent.y();
  const double target_cells = std::max<double>(1.0, static_cast<double>(segments_.size()));
  cell_ = std::sqrt(area / target_cells);
  cell_ = std::max({cell_, extent.x() / 1024.0, extent.y() / 1024.0});
  nx_ = std::max<long>(1, static_cast<long>(std::ceil(extent.x() / cell_)));
  ny_ = std::max<long>(1, static_cast<long>(std::ceil(extent.y() / cell_)));
  cells_.assign(static_cast<std::size_t>(nx_ * ny_), {});
  for (std::size_t s = 0; s < segments_.size(); ++s) {
    const auto& seg = segments_[s];
    const long x0 = cell_x(std::min(seg.a.x(), seg.b.x()));
    const long x1 = cell_x(std::max(seg.a.x(), seg.b.x()));
    const long y0 = cell_y(std::min(seg.a.y(), seg.b.y()));
    const long y1 = cell_y(std::max(seg.a.y(), seg.b.y()));
    for (long cy = y0; cy <= y1; ++cy) {
      for (long cx = x0; cx <= x1; ++cx) {
        cells_[static_cast<std::size_t>(cy * nx_ + cx)].push_back(s);
      }
    }
  }
}

long PolygonDomain::cell_x(double x) const {
  const double c = std::floor((x - lo_.x()) / cell_);
  if (!(c > 0.0)) return 0;
  return std::min(nx_ - 1, static_cast<long>(c));
}

long PolygonDomain::cell_y(double y) const {
  const double c = std::floor((y - lo_.y()) / cell_);
  if (!(c > 0.0)) return 0;
  return std::min(ny_ - 1, static_cast<long>(c));
}

std::vector<std::size_t> PolygonDomain::candidates_in_box(const Vec2& lo, const Vec2& hi) const {
  std::vector<std::size_t> out;
  if (hi.x() < lo_.x() || hi.y() < lo_.y() || lo.x() > hi_.x() || lo.y() > hi_.y()) return out;
  const long x0 = cell_x(lo.x());
  const long x1 = cell_x(hi.x());
  const long y0 = cell_y(lo.y());
  const long y1 = cell_y(hi.y());
  for (long cy = y0; cy <= y1; ++cy) {
    for (long cx = x0; cx <= x1; ++cx) {
      const auto& cell = cells_[static_cast<std::size_t>(cy * nx_ + cx)];
      out.insert(out.end(), cell.begin(), cell.end());
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void PolygonDomain::cells_at_radius(long cx, long cy, long r, std::vector<std::size_t>& out) const {
  auto visit = [&](long x, long y) {
    if (x < 0 || y < 0 || x >= nx_ || y >= ny_) return;
    const auto& cell = cells_[static_cast<std::size_t>(y * nx_ + x)];
    out.insert(out.end(), cell.begin(), cell.end());
  };
  if (r == 0) {
    visit(cx, cy);
    return;
  }
  for (long x = cx - r; x <= cx + r; ++x) {
    visit(x, cy - r);
    visit(x, cy + r);
  }
  for (long y = cy - r + 1; y <= cy + r - 1; ++y) {
    visit(cx - r, y);
    visit(cx + r, y);
  }
}

Vec2 closest_on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return a;
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

NearestPoint nearest_boundary_point(const PolygonDomain& domain, const Vec2& p) {
  const auto& segs = domain.segments();
  const long cx = domain.cell_x(p.x());
  const long cy = domain.cell_y(p.y());
  const long max_r = std::max(domain.nx(), domain.ny());
  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best_id = segs.size();
  Vec2 best_point = p;
  std::vector<std::size_t> ids;
  for (long r = 0; r <= max_r; ++r) {
    ids.clear();
    domain.cells_at_radius(cx, cy, r, ids);
    for (std::size_t id : ids) {
      const Vec2 q = closest_on_segment(p, segs[id].a, segs[id].b);
      const double d2 = (p - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && id < best_id)) {
        best_d2 = d2;
        best_id = id;
        best_point = q;
      }
    }
    const double reach = static_cast<double>(r) * domain.cell_size();
    if (best_id < segs.size() && best_d2 < reach * reach) break;
  }
  return NearestPoint{best_point, std::sqrt(best_d2), best_id};
}

bool contains(const PolygonDomain& domain, const Vec2& p) {
  const Vec2 lo = domain.min_corner();
  const Vec2 hi = domain.max_corner();
  if (p.x() < lo.x() || p.y() < lo.y() || p.x() > hi.x() || p.y() > hi.y()) return false;
  const auto& segs = domain.segments();
  // Boundary points count as inside.
  const auto ids = domain.candidates_in_box(p, Vec2(hi.x(), p.y()));
  bool inside = false;
  for (std::size_t id : ids) {
    const Vec2& a = segs[id].a;
    const Vec2& b = segs[id].b;
    if ((p - closest_on_segment(p, a, b)).squaredNorm() <= 1e-24) return true;
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_cross = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

double signed_angle(const Vec2& from, const Vec2& to) {
  double c = cross(from, to);
  double d = from.dot(to);
  // Parallel and perpendicular directions are exact up to rounding of the products.
  const double tol = 8.0 * std::numeric_limits<double>::epsilon() * from.norm() * to.norm();
  if (std::abs(c) <= tol) c = 0.0;
  if (std::abs(d) <= tol) d = 0.0;
  const double a = std::atan2(c, d);
  return a <= -std::numbers::pi ? std::numbers::pi : a;
}

BoundaryMetrics boundary_metrics(const PolygonDomain& domain, const Vec2& position,
                                 const Vec2& velocity) {
  const NearestPoint np = nearest_boundary_point(domain, position);
  BoundaryMetrics m;
  m.nearest_point = np.point;
  m.d_shore = np.distance;
  if (np.distance > 0.0) {
    m.normal = (position - np.point) / np.distance;
  } else {
    const auto& seg = domain.segments()[np.segment];
    const Vec2 dir = seg.b - seg.a;
    m.normal = Vec2(-dir.y(), dir.x()).normalized();
  }
  if (np.distance > 0.0 && velocity.squaredNorm() > 0.0) {
    m.theta = signed_angle(m.normal, velocity);
  } else {
    m.theta = std::numbers::pi / 2.0;
  }
  return m;
}

bool open_segment_hits(const Vec2& p, const Vec2& q, const Vec2& a, const Vec2& b) {
  const int o1 = orientation(p, q, a);
  const int o2 = orientation(p, q, b);
  const int o3 = orientation(a, b, p);
  const int o4 = orientation(a, b, q);
  const Vec2 pq = q - p;
  const double len2 = pq.squaredNorm();
  if (len2 == 0.0) return false;
  auto strictly_inside = [&](const Vec2& r) {
    const double t = (r - p).dot(pq) / len2;
    return t > 0.0 && t < 1.0;
  };
  if (o1 == 0 && o2 == 0) {
    const double ta = (a - p).dot(pq) / len2;
    const double tb = (b - p).dot(pq) / len2;
    return std::max(ta, tb) > 0.0 && std::min(ta, tb) < 1.0;
  }
  if (o1 * o2 < 0 && o3 * o4 < 0) return true;
  if (o1 == 0 && strictly_inside(a)) return true;
  if (o2 == 0 && strictly_inside(b)) return true;
  return false;
}

bool line_of_sight(const PolygonDomain& domain, const Vec2& a, const Vec2& b) {
  const auto& segs = domain.segments();
  for (std::size_t id : domain.candidates_in_box(a.cwiseMin(b), a.cwiseMax(b))) {
    if (open_segment_hits(a, b, segs[id].a, segs[id].b)) return false;
  }
  return true;
}

}  // namespace ccvm::geometry
