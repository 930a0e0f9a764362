#pragma once

#include <cstddef>
#include <vector>

#include "ccvm/track.hpp"

namespace ccvm::geometry {

/// Boundary segment, identified by (ring, index within ring).
struct Segment {
  Vec2 a;
  Vec2 b;
  std::size_t ring = 0;
  std::size_t index = 0;
};

/// Water region: polygons with holes in planar km. Each polygon is an outer
/// ring followed by its hole rings. Immutable after construction.
class PolygonDomain {
 public:
  /// `polygons[k][0]` is the outer ring of polygon k, the rest are holes.
  /// Rings may be given open or closed; they are normalized to closed form.
  /// Throws InputError on rings with fewer than 3 distinct vertices or on
  /// self-intersecting rings.
  explicit PolygonDomain(std::vector<std::vector<std::vector<Vec2>>> polygons);

  /// Closed rings in global order (polygon-major, outer ring first).
  const std::vector<std::vector<Vec2>>& rings() const { return rings_; }
  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t polygon_count() const { return polygon_count_; }

  Vec2 min_corner() const { return lo_; }
  Vec2 max_corner() const { return hi_; }

  /// Segment ids whose bounding boxes touch any grid cell intersecting the
  /// box [lo, hi]. Sorted, unique.
  std::vector<std::size_t> candidates_in_box(const Vec2& lo, const Vec2& hi) const;

  /// Segment ids in the cells of the query ring of Chebyshev radius r around
  /// cell (cx, cy). Used by the nearest-point search.
  void cells_at_radius(long cx, long cy, long r, std::vector<std::size_t>& out) const;

  long cell_x(double x) const;
  long cell_y(double y) const;
  double cell_size() const { return cell_; }
  long nx() const { return nx_; }
  long ny() const { return ny_; }

 private:
  void build_index();

  std::vector<std::vector<Vec2>> rings_;
  std::vector<Segment> segments_;
  std::size_t polygon_count_ = 0;
  Vec2 lo_;
  Vec2 hi_;
  double cell_ = 1.0;
  long nx_ = 1;
  long ny_ = 1;
  std::vector<std::vector<std::size_t>> cells_;
};

struct NearestPoint {
  Vec2 point;
  double distance = 0.0;
  std::size_t segment = 0;  // global segment id (ring-major order)
};

struct BoundaryMetrics {
  Vec2 nearest_point;
  double d_shore = 0.0;
  Vec2 normal;         // unit vector from nearest point towards the query
  double theta = 0.0;  // signed angle normal -> velocity, in (-pi, pi]
};

/// Closest point of a single segment to p.
Vec2 closest_on_segment(const Vec2& p, const Vec2& a, const Vec2& b);

/// Boundary points count as contained.
bool contains(const PolygonDomain& domain, const Vec2& p);

/// Nearest boundary point; ties resolved towards the lowest segment id.
NearestPoint nearest_boundary_point(const PolygonDomain& domain, const Vec2& p);

/// Theta defaults to pi/2 when the velocity is zero or the point sits on the
/// boundary (normal undefined).
BoundaryMetrics boundary_metrics(const PolygonDomain& domain, const Vec2& position,
                                 const Vec2& velocity);

/// True iff the open segment (a, b) touches no boundary segment.
bool line_of_sight(const PolygonDomain& domain, const Vec2& a, const Vec2& b);

/// Whether the open segment (p, q) and the closed segment [a, b] share a point.
bool open_segment_hits(const Vec2& p, const Vec2& q, const Vec2& a, const Vec2& b);

/// Signed angle from `from` to `to`, counter-clockwise positive, in (-pi, pi].
double signed_angle(const Vec2& from, const Vec2& to);

}  // namespace ccvm::geometry
