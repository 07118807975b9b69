/* Copyright 2026 The obbssl Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Oriented boxes: angle normalization, corner polygons and rotated IoU.
//
// Angle convention: the angle rotates the box's w-axis away from the scene
// x-axis, counter-clockwise positive, and always lives in [-pi/2, pi/2).

#ifndef OBBSSL_OBB_HPP_
#define OBBSSL_OBB_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace obbssl {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kHalfPi = std::numbers::pi / 2.0;

// On-edge classification tolerance for polygon clipping, in scene units.
inline constexpr double kClipEpsilon = 1e-9;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2 operator+(const Point2& p) const { return {x + p.x, y + p.y}; }
  Point2 operator-(const Point2& p) const { return {x - p.x, y - p.y}; }
  Point2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Point2&) const = default;
};

inline double Cross(const Point2& a, const Point2& b) {
  return a.x * b.y - a.y * b.x;
}

/// Rotation angle in radians, reduced modulo pi into [-pi/2, pi/2).
class Angle {
 public:
  constexpr Angle() = default;

  /// Reduces `theta` modulo pi. Throws std::invalid_argument if not finite.
  static Angle FromRadians(double theta);

  constexpr double radians() const { return radians_; }

  friend bool operator==(Angle, Angle) = default;

 private:
  explicit constexpr Angle(double r) : radians_(r) {}
  double radians_ = 0.0;
};

inline Angle normalize_angle(double theta) { return Angle::FromRadians(theta); }

inline Angle Angle::FromRadians(double theta) {
  if (!std::isfinite(theta)) {
    throw std::invalid_argument("normalize_angle: non-finite angle");
  }
  // Values already in range are returned untouched so that normalization is
  // exactly idempotent.
  if (theta >= -kHalfPi && theta < kHalfPi) return Angle(theta);
  double r = theta - kPi * std::floor((theta + kHalfPi) / kPi);
  if (r >= kHalfPi) r -= kPi;
  if (r < -kHalfPi) r += kPi;
  // Rounding can land exactly on the open upper end.
  if (r >= kHalfPi) r = -kHalfPi;
  return Angle(r);
}

/// |r_t - r_s| on normalized angles, without periodic wrap. In [0, pi).
inline double angle_gap(Angle r_t, Angle r_s) {
  return std::abs(r_t.radians() - r_s.radians());
}

/// pi-periodic distance between two box orientations. In [0, pi/2].
inline double circular_angle_gap(Angle r_t, Angle r_s) {
  const double d = angle_gap(r_t, r_s);
  return std::min(d, kPi - d);
}

struct OrientedBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;
  Angle angle;
  int class_id = 0;

  OrientedBox() = default;
  OrientedBox(double cx_, double cy_, double w_, double h_, Angle a,
              int cls = 0)
      : cx(cx_), cy(cy_), w(w_), h(h_), angle(a), class_id(cls) {
    if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(w) || !std::isfinite(h) ||
        !std::isfinite(cx) || !std::isfinite(cy)) {
      throw std::invalid_argument("OrientedBox: need finite center and w, h > 0");
    }
    if (class_id < 0) throw std::invalid_argument("OrientedBox: class_id < 0");
  }
  OrientedBox(double cx_, double cy_, double w_, double h_, double theta,
              int cls = 0)
      : OrientedBox(cx_, cy_, w_, h_, Angle::FromRadians(theta), cls) {}

  double area() const { return w * h; }
  Point2 center() const { return {cx, cy}; }

  bool operator==(const OrientedBox&) const = default;
};

using Quad = std::array<Point2, 4>;

/// Rectangle corners in counter-clockwise order, starting at local (-w/2, -h/2).
inline Quad obb_to_polygon(const OrientedBox& box) {
  const double c = std::cos(box.angle.radians());
  const double s = std::sin(box.angle.radians());
  const double hw = box.w / 2.0;
  const double hh = box.h / 2.0;
  const std::array<Point2, 4> local = {
      Point2{-hw, -hh}, Point2{hw, -hh}, Point2{hw, hh}, Point2{-hw, hh}};
  Quad out;
  for (size_t i = 0; i < 4; ++i) {
    out[i] = {box.cx + c * local[i].x - s * local[i].y,
              box.cy + s * local[i].x + c * local[i].y};
  }
  return out;
}

/// Coordinates of `p` in the box frame (u along the w-axis, v along h).
inline Point2 to_box_frame(const OrientedBox& box, const Point2& p) {
  const double c = std::cos(box.angle.radians());
  const double s = std::sin(box.angle.radians());
  const double dx = p.x - box.cx;
  const double dy = p.y - box.cy;
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Point2 from_box_frame(const OrientedBox& box, const Point2& local) {
  const double c = std::cos(box.angle.radians());
  const double s = std::sin(box.angle.radians());
  return {box.cx + c * local.x - s * local.y,
          box.cy + s * local.x + c * local.y};
}

/// Closed point-in-rotated-rectangle test.
inline bool contains_point(const OrientedBox& box, const Point2& p) {
  const Point2 q = to_box_frame(box, p);
  return std::abs(q.x) <= box.w / 2.0 + kClipEpsilon &&
         std::abs(q.y) <= box.h / 2.0 + kClipEpsilon;
}

/// Signed distance from `p` to the box boundary; positive inside.
inline double signed_edge_distance(const OrientedBox& box, const Point2& p) {
  const Point2 q = to_box_frame(box, p);
  const double dx = std::abs(q.x) - box.w / 2.0;
  const double dy = std::abs(q.y) - box.h / 2.0;
  if (dx <= 0.0 && dy <= 0.0) return -std::max(dx, dy);
  const double ox = std::max(dx, 0.0);
  const double oy = std::max(dy, 0.0);
  return -std::sqrt(ox * ox + oy * oy);
}

inline double polygon_area(const std::vector<Point2>& poly) {
  if (poly.size() < 3) return 0.0;
  double acc = 0.0;
  for (size_t i = 0, n = poly.size(); i < n; ++i) {
    acc += Cross(poly[i], poly[(i + 1) % n]);
  }
  return 0.5 * acc;
}

/// Sutherland-Hodgman clip of `subject` against a convex CCW `clipper`.
inline std::vector<Point2> clip_convex(std::vector<Point2> subject,
                                       const Quad& clipper) {
  std::vector<Point2> input;
  for (size_t e = 0; e < clipper.size() && !subject.empty(); ++e) {
    const Point2 a = clipper[e];
    const Point2 b = clipper[(e + 1) % clipper.size()];
    const Point2 edge = b - a;
    auto side = [&](const Point2& p) { return Cross(edge, p - a); };
    input.swap(subject);
    subject.clear();
    for (size_t i = 0; i < input.size(); ++i) {
      const Point2 cur = input[i];
      const Point2 prev = input[(i + input.size() - 1) % input.size()];
      const double sc = side(cur);
      const double sp = side(prev);
      const bool cur_in = sc >= -kClipEpsilon;
      const bool prev_in = sp >= -kClipEpsilon;
      if (cur_in != prev_in) {
        const double t = sp / (sp - sc);
        subject.push_back(prev + (cur - prev) * t);
      }
      if (cur_in) subject.push_back(cur);
    }
  }
  return subject;
}

namespace detail {

inline auto box_key(const OrientedBox& b) {
  return std::make_tuple(b.cx, b.cy, b.w, b.h, b.angle.radians());
}

}  // namespace detail

/// Intersection over union of two rotated rectangles; exactly symmetric.
inline double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  // Fixed argument order makes iou(a, b) and iou(b, a) the same computation.
  if (detail::box_key(b) < detail::box_key(a)) return rotated_iou(b, a);

  const double reach = 0.5 * (std::hypot(a.w, a.h) + std::hypot(b.w, b.h));
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) > reach) return 0.0;

  const Quad pa = obb_to_polygon(a);
  const Quad pb = obb_to_polygon(b);
  const std::vector<Point2> inter =
      clip_convex(std::vector<Point2>(pa.begin(), pa.end()), pb);
  const double inter_area = std::max(polygon_area(inter), 0.0);
  const double min_area = std::min(a.area(), b.area());
  if (inter_area <= 1e-12 * min_area) return 0.0;
  const double uni = a.area() + b.area() - inter_area;
  return std::clamp(inter_area / uni, 0.0, 1.0);
}

}  // namespace obbssl

#endif  // OBBSSL_OBB_HPP_
