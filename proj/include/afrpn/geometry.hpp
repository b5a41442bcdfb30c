#pragma once

#include <array>
#include <vector>

#include "afrpn/common.hpp"

namespace afrpn {

// Image coordinate frame: x rightward, y downward, origin at the top-left
// pixel corner, continuous pixel units. Canonical polygon winding is
// clockwise on screen, which makes the shoelace signed area positive.

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2() = default;
  Point2(double px, double py);  // rejects NaN/Inf

  Point2 operator+(const Point2& o) const { return {x + o.x, y + o.y}; }
  Point2 operator-(const Point2& o) const { return {x - o.x, y - o.y}; }
  Point2 operator*(double s) const { return {x * s, y * s}; }
};

inline double cross(const Point2& a, const Point2& b) { return a.x * b.y - a.y * b.x; }
inline double dot(const Point2& a, const Point2& b) { return a.x * b.x + a.y * b.y; }
double norm(const Point2& a);

struct AABB {
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  Point2 center() const { return {(xmin + xmax) * 0.5, (ymin + ymax) * 0.5}; }
};

// Four vertices in canonical order: clockwise in image coordinates, starting
// from the vertex minimizing x+y (ties: smaller y, then smaller x).
struct Quad {
  std::array<Point2, 4> v;
};

// A Quad whose interior angles are right angles within kRectAngleTol.
struct OrientedRect {
  Quad quad;

  Point2 center() const;
  double side01() const;  // length of the first canonical edge v0->v1
  double side12() const;
  double long_side() const;
  double short_side() const;
};

inline constexpr double kDegenerateAreaTol = 1e-6;  // px^2
inline constexpr double kRectAngleTol = 1e-6;       // radians
inline constexpr double kBoundaryEps = 1e-9;        // boundary-inclusive tests

// Reorders vertices into the canonical order. Idempotent; invariant under
// cyclic rotation and reversal of the input. Throws DegenerateQuad on
// zero-area or self-intersecting input.
Quad canonicalize(const std::array<Point2, 4>& vertices);
Quad canonicalize(const Quad& q);

AABB aabb(const Quad& q);

// Positive area of a simple polygon (shoelace).
double polygon_area(const std::vector<Point2>& poly);
double polygon_area(const Quad& q);

// Boundary-inclusive test against a convex polygon in canonical winding.
bool point_in_polygon(const Point2& p, const std::vector<Point2>& poly);
bool point_in_polygon(const Point2& p, const Quad& q);

// Sutherland-Hodgman intersection of two convex polygons; empty when
// disjoint. Both inputs in canonical winding.
std::vector<Point2> intersect_convex(const std::vector<Point2>& a,
                                     const std::vector<Point2>& b);

double iou_quad(const Quad& a, const Quad& b);
double iou_aabb(const AABB& a, const AABB& b);

// Minimum-area oriented rectangle containing q (rotating calipers over the
// convex hull: the optimum has a side collinear with a hull edge).
OrientedRect min_enclosing_rect(const Quad& q);

// Same center and orientation, short side scaled by short_factor and long
// side by long_factor. On square ties the first canonical edge counts as
// the long side.
OrientedRect shrink_rect(const OrientedRect& r, double short_factor = 0.5,
                         double long_factor = 0.8);

// Validates the rectangle invariants (right angles, equal opposite sides).
OrientedRect make_oriented_rect(const Quad& q);

std::vector<Point2> quad_points(const Quad& q);

}  // namespace afrpn
