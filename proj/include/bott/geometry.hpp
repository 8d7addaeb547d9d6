#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "bott/types.hpp"

namespace bott {

struct Point2 {
  double x = 0, y = 0;
};

using Polygon = std::vector<Point2>;

/// Counter-clockwise footprint corners of a box in the ground plane.
/// Length runs along the heading, width across it.
inline std::array<Point2, 4> footprint(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Point2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const double u = local[i][0], v = local[i][1];
    out[i] = {b.x + c * u - s * v, b.y + s * u + c * v};
  }
  return out;
}

/// Shoelace area; positive for counter-clockwise polygons.
inline double signed_area(const Polygon& p) {
  double a = 0;
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % n];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * a;
}

namespace detail {

inline double cross(const Point2& a, const Point2& b, const Point2& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

inline Point2 segment_line_intersection(const Point2& p, const Point2& q, const Point2& a, const Point2& b) {
  const double dp = cross(a, b, p);
  const double dq = cross(a, b, q);
  const double t = dp / (dp - dq);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace detail

/// Sutherland-Hodgman clipping of `subject` by the convex CCW polygon `clip`.
inline Polygon clip_convex(Polygon subject, const Polygon& clip) {
  for (std::size_t e = 0, n = clip.size(); e < n && !subject.empty(); ++e) {
    const Point2& a = clip[e];
    const Point2& b = clip[(e + 1) % n];
    Polygon next;
    next.reserve(subject.size() + 2);
    for (std::size_t i = 0, m = subject.size(); i < m; ++i) {
      const Point2& p = subject[i];
      const Point2& q = subject[(i + 1) % m];
      const bool p_in = detail::cross(a, b, p) >= 0;
      const bool q_in = detail::cross(a, b, q) >= 0;
      if (p_in) next.push_back(p);
      if (p_in != q_in) next.push_back(detail::segment_line_intersection(p, q, a, b));
    }
    subject = std::move(next);
  }
  return subject;
}

/// Intersection over union of the yaw-rotated ground-plane footprints.
/// Exactly symmetric: the arguments are put in a canonical order first.
inline double bev_iou(const Box3D& p, const Box3D& q) {
  const bool swap = std::tie(q.x, q.y, q.w, q.l, q.yaw) < std::tie(p.x, p.y, p.w, p.l, p.yaw);
  const Box3D& a = swap ? q : p;
  const Box3D& b = swap ? p : q;
  const double area_a = a.w * a.l;
  const double area_b = b.w * b.l;
  if (!(area_a > 0) || !(area_b > 0)) throw std::domain_error("bev_iou: degenerate footprint");
  // Disjoint bounding circles cannot overlap.
  const double ra = 0.5 * std::hypot(a.w, a.l), rb = 0.5 * std::hypot(b.w, b.l);
  if (std::hypot(a.x - b.x, a.y - b.y) > ra + rb) return 0.0;

  const auto fa = footprint(a);
  const auto fb = footprint(b);
  const Polygon inter = clip_convex(Polygon(fa.begin(), fa.end()), Polygon(fb.begin(), fb.end()));
  if (inter.size() < 3) return 0.0;
  const double ai = std::abs(signed_area(inter));
  const double iou = ai / (area_a + area_b - ai);
  return std::clamp(iou, 0.0, 1.0);
}

/// Planar (xy) center distance in meters.
inline double center_distance(const Box3D& a, const Box3D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace bott
