#include "afrpn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace afrpn {

Point2::Point2(double px, double py) : x(px), y(py) {
  if (!std::isfinite(px) || !std::isfinite(py))
    throw Error("Point2: non-finite coordinate");
}

double norm(const Point2& a) { return std::sqrt(a.x * a.x + a.y * a.y); }

namespace {

double signed_area(const std::array<Point2, 4>& v) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Point2& p = v[i];
    const Point2& q = v[(i + 1) % 4];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * s;
}

// Proper crossing of open segments ab and cd.
bool segments_cross(const Point2& a, const Point2& b, const Point2& c,
                    const Point2& d) {
  const double d1 = cross(b - a, c - a);
  const double d2 = cross(b - a, d - a);
  const double d3 = cross(d - c, a - c);
  const double d4 = cross(d - c, b - c);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
         ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

int canonical_start(const std::array<Point2, 4>& v) {
  int best = 0;
  for (int i = 1; i < 4; ++i) {
    const double si = v[i].x + v[i].y;
    const double sb = v[best].x + v[best].y;
    if (si < sb || (si == sb && (v[i].y < v[best].y ||
                                 (v[i].y == v[best].y && v[i].x < v[best].x))))
      best = i;
  }
  return best;
}

}  // namespace

Quad canonicalize(const std::array<Point2, 4>& vertices) {
  std::array<Point2, 4> v = vertices;
  const double area = signed_area(v);
  if (std::abs(area) < kDegenerateAreaTol)
    throw DegenerateQuad("canonicalize: zero-area quad");
  if (segments_cross(v[0], v[1], v[2], v[3]) ||
      segments_cross(v[1], v[2], v[3], v[0]))
    throw DegenerateQuad("canonicalize: self-intersecting quad");
  if (area < 0.0) std::swap(v[1], v[3]);  // reverse winding, v[0] stays put
  const int s = canonical_start(v);
  Quad out;
  for (int i = 0; i < 4; ++i) out.v[i] = v[(s + i) % 4];
  return out;
}

Quad canonicalize(const Quad& q) { return canonicalize(q.v); }

AABB aabb(const Quad& q) {
  AABB box{q.v[0].x, q.v[0].y, q.v[0].x, q.v[0].y};
  for (int i = 1; i < 4; ++i) {
    box.xmin = std::min(box.xmin, q.v[i].x);
    box.ymin = std::min(box.ymin, q.v[i].y);
    box.xmax = std::max(box.xmax, q.v[i].x);
    box.ymax = std::max(box.ymax, q.v[i].y);
  }
  return box;
}

double polygon_area(const std::vector<Point2>& poly) {
  const size_t n = poly.size();
  if (n < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return std::abs(s) * 0.5;
}

double polygon_area(const Quad& q) {
  return polygon_area(std::vector<Point2>(q.v.begin(), q.v.end()));
}

bool point_in_polygon(const Point2& p, const std::vector<Point2>& poly) {
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % n];
    if (cross(b - a, p - a) < -kBoundaryEps) return false;
  }
  return true;
}

bool point_in_polygon(const Point2& p, const Quad& q) {
  for (int i = 0; i < 4; ++i) {
    const Point2& a = q.v[i];
    const Point2& b = q.v[(i + 1) % 4];
    if (cross(b - a, p - a) < -kBoundaryEps) return false;
  }
  return true;
}

std::vector<Point2> intersect_convex(const std::vector<Point2>& a,
                                     const std::vector<Point2>& b) {
  std::vector<Point2> out = a;
  for (size_t i = 0; i < b.size() && !out.empty(); ++i) {
    const Point2& ca = b[i];
    const Point2& cb = b[(i + 1) % b.size()];
    const Point2 edge = cb - ca;
    std::vector<Point2> in;
    in.swap(out);
    const size_t n = in.size();
    for (size_t j = 0; j < n; ++j) {
      const Point2& p = in[j];
      const Point2& q = in[(j + 1) % n];
      const double dp = cross(edge, p - ca);
      const double dq = cross(edge, q - ca);
      if (dp >= 0.0) out.push_back(p);
      if ((dp > 0.0 && dq < 0.0) || (dp < 0.0 && dq > 0.0)) {
        const double t = dp / (dp - dq);
        out.push_back(p + (q - p) * t);
      }
    }
  }
  return out;
}

double iou_quad(const Quad& a, const Quad& b) {
  const double aa = polygon_area(a);
  const double ab = polygon_area(b);
  if (aa <= 0.0 || ab <= 0.0) return 0.0;
  const double inter = polygon_area(intersect_convex(quad_points(a), quad_points(b)));
  const double uni = aa + ab - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_aabb(const AABB& a, const AABB& b) {
  const double w = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double h = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  const double inter = w * h;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Point2 OrientedRect::center() const {
  return {(quad.v[0].x + quad.v[1].x + quad.v[2].x + quad.v[3].x) * 0.25,
          (quad.v[0].y + quad.v[1].y + quad.v[2].y + quad.v[3].y) * 0.25};
}

double OrientedRect::side01() const { return norm(quad.v[1] - quad.v[0]); }
double OrientedRect::side12() const { return norm(quad.v[2] - quad.v[1]); }
double OrientedRect::long_side() const { return std::max(side01(), side12()); }
double OrientedRect::short_side() const { return std::min(side01(), side12()); }

OrientedRect make_oriented_rect(const Quad& q) {
  const Quad c = canonicalize(q);
  for (int i = 0; i < 4; ++i) {
    const Point2 e1 = c.v[(i + 1) % 4] - c.v[i];
    const Point2 e2 = c.v[(i + 2) % 4] - c.v[(i + 1) % 4];
    const double l1 = norm(e1);
    const double l2 = norm(e2);
    if (l1 <= 0.0 || l2 <= 0.0) throw Error("make_oriented_rect: zero side");
    const double cosang = dot(e1, e2) / (l1 * l2);
    if (std::abs(cosang) > kRectAngleTol)
      throw Error("make_oriented_rect: corner is not a right angle");
  }
  if (std::abs(norm(c.v[1] - c.v[0]) - norm(c.v[3] - c.v[2])) > 1e-6 ||
      std::abs(norm(c.v[2] - c.v[1]) - norm(c.v[0] - c.v[3])) > 1e-6)
    throw Error("make_oriented_rect: opposite sides differ");
  return OrientedRect{c};
}

namespace {

// Hull of up to 4 points, canonical winding (Andrew monotone chain).
std::vector<Point2> convex_hull4(const Quad& q) {
  std::vector<Point2> pts(q.v.begin(), q.v.end());
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  auto build = [&](bool upper) {
    std::vector<Point2> h;
    for (size_t k = 0; k < pts.size(); ++k) {
      const Point2& p = pts[upper ? pts.size() - 1 - k : k];
      while (h.size() >= 2 &&
             cross(h.back() - h[h.size() - 2], p - h[h.size() - 2]) <= 0.0)
        h.pop_back();
      h.push_back(p);
    }
    return h;
  };
  std::vector<Point2> lower = build(false);
  std::vector<Point2> upper = build(true);
  lower.pop_back();
  upper.pop_back();
  lower.insert(lower.end(), upper.begin(), upper.end());
  // Monotone chain yields counter-clockwise in math coordinates, which is the
  // canonical clockwise-on-screen winding under y-down.
  return lower;
}

}  // namespace

OrientedRect min_enclosing_rect(const Quad& q) {
  const Quad c = canonicalize(q);
  const std::vector<Point2> hull = convex_hull4(c);
  if (hull.size() < 3) throw DegenerateQuad("min_enclosing_rect: collinear hull");

  double best_area = std::numeric_limits<double>::infinity();
  Point2 best_u, best_v;
  double bu0 = 0, bu1 = 0, bv0 = 0, bv1 = 0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const Point2 e = hull[(i + 1) % hull.size()] - hull[i];
    const double len = norm(e);
    if (len <= 0.0) continue;
    const Point2 u{e.x / len, e.y / len};
    const Point2 v{-u.y, u.x};
    double u0 = dot(hull[0], u), u1 = u0, v0 = dot(hull[0], v), v1 = v0;
    for (size_t k = 1; k < hull.size(); ++k) {
      const double su = dot(hull[k], u);
      const double sv = dot(hull[k], v);
      u0 = std::min(u0, su);
      u1 = std::max(u1, su);
      v0 = std::min(v0, sv);
      v1 = std::max(v1, sv);
    }
    const double area = (u1 - u0) * (v1 - v0);
    if (area < best_area) {
      best_area = area;
      best_u = u;
      best_v = v;
      bu0 = u0;
      bu1 = u1;
      bv0 = v0;
      bv1 = v1;
    }
  }

  const std::array<Point2, 4> corners = {
      best_u * bu0 + best_v * bv0, best_u * bu1 + best_v * bv0,
      best_u * bu1 + best_v * bv1, best_u * bu0 + best_v * bv1};
  return make_oriented_rect(canonicalize(corners));
}

OrientedRect shrink_rect(const OrientedRect& r, double short_factor,
                         double long_factor) {
  if (!(short_factor > 0.0) || short_factor > 1.0 || !(long_factor > 0.0) ||
      long_factor > 1.0)
    throw InvalidFactor("shrink_rect: factors must lie in (0, 1]");

  const Point2 c = r.center();
  const Point2 e1 = r.quad.v[1] - r.quad.v[0];
  const Point2 e2 = r.quad.v[2] - r.quad.v[1];
  // First canonical edge is "long" on ties.
  const bool first_is_long = norm(e1) >= norm(e2);
  const double f1 = first_is_long ? long_factor : short_factor;
  const double f2 = first_is_long ? short_factor : long_factor;
  const Point2 h1 = e1 * (0.5 * f1);
  const Point2 h2 = e2 * (0.5 * f2);
  const std::array<Point2, 4> corners = {c - h1 - h2, c + h1 - h2, c + h1 + h2,
                                         c - h1 + h2};
  return make_oriented_rect(canonicalize(corners));
}

std::vector<Point2> quad_points(const Quad& q) {
  return std::vector<Point2>(q.v.begin(), q.v.end());
}

}  // namespace afrpn
