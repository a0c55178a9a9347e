#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "mirrorfusion/error.hpp"

namespace mf {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;

  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
constexpr Vec3 hadamard(const Vec3& a, const Vec3& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalize(const Vec3& v) {
  const double n = norm(v);
  if (n == 0.0) throw InvalidArgument("normalize: zero vector");
  return v / n;
}
inline Vec3 lerp(const Vec3& a, const Vec3& b, double t) { return a + (b - a) * t; }

/// Spherical interpolation between unit vectors.
inline Vec3 slerp(const Vec3& a, const Vec3& b, double t) {
  const double c = std::clamp(dot(a, b), -1.0, 1.0);
  const double theta = std::acos(c);
  if (theta < 1e-9) return normalize(lerp(a, b, t));
  const double s = std::sin(theta);
  return a * (std::sin((1.0 - t) * theta) / s) + b * (std::sin(t * theta) / s);
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

/// Rotation about +y by `rad` (right-handed).
inline Vec3 rotate_y(const Vec3& v, double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  return {c * v.x + s * v.z, v.y, -s * v.x + c * v.z};
}

struct Plane {
  Vec3 origin;
  Vec3 normal;  // unit length
};

inline void require_unit(const Vec3& n, const char* what) {
  if (std::abs(norm(n) - 1.0) > 1e-9) throw InvalidArgument(std::string(what) + ": normal must be unit length");
}

/// p' = p - 2 ((p - o) . n) n.
inline Vec3 reflect_point(const Vec3& p, const Plane& plane) {
  require_unit(plane.normal, "reflect_point");
  return p - plane.normal * (2.0 * dot(p - plane.origin, plane.normal));
}

inline Vec3 reflect_direction(const Vec3& d, const Vec3& n) { return d - n * (2.0 * dot(d, n)); }

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit length
  Vec3 at(double t) const { return origin + dir * t; }
};

struct Hit {
  double t = 0.0;
  Vec3 normal;  // outward-facing unit normal
};

inline constexpr double kRayEpsilon = 1e-9;

inline std::optional<Hit> intersect_sphere(const Ray& r, const Vec3& center, double radius) {
  const Vec3 oc = r.origin - center;
  const double b = dot(oc, r.dir);
  const double c = dot(oc, oc) - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= kRayEpsilon) t = -b + sq;
  if (t <= kRayEpsilon) return std::nullopt;
  return Hit{t, (r.at(t) - center) / radius};
}

/// Box with half extents `half` rotated by `yaw` (radians) about +y around its centre.
inline std::optional<Hit> intersect_box(const Ray& r, const Vec3& center, const Vec3& half, double yaw) {
  const Vec3 o = rotate_y(r.origin - center, -yaw);
  const Vec3 d = rotate_y(r.dir, -yaw);
  double t_near = -1e300, t_far = 1e300;
  int near_axis = 0, far_axis = 0;
  double near_sign = 0.0, far_sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double oa = o[a], da = d[a], ha = half[a];
    if (std::abs(da) < 1e-15) {
      if (oa < -ha || oa > ha) return std::nullopt;
      continue;
    }
    double t1 = (-ha - oa) / da, t2 = (ha - oa) / da;
    double s1 = -1.0, s2 = 1.0;
    if (t1 > t2) {
      std::swap(t1, t2);
      std::swap(s1, s2);
    }
    if (t1 > t_near) {
      t_near = t1;
      near_axis = a;
      near_sign = s1;
    }
    if (t2 < t_far) {
      t_far = t2;
      far_axis = a;
      far_sign = s2;
    }
    if (t_near > t_far) return std::nullopt;
  }
  double t = t_near;
  int axis = near_axis;
  double sign = near_sign;
  if (t <= kRayEpsilon) {
    t = t_far;
    axis = far_axis;
    sign = far_sign;
  }
  if (t <= kRayEpsilon) return std::nullopt;
  Vec3 n{};
  if (axis == 0) n.x = sign;
  if (axis == 1) n.y = sign;
  if (axis == 2) n.z = sign;
  return Hit{t, rotate_y(n, yaw)};
}

/// Capped cylinder with vertical axis through `center`.
inline std::optional<Hit> intersect_cylinder(const Ray& r, const Vec3& center, double radius, double half_height) {
  std::optional<Hit> best;
  auto consider = [&](double t, const Vec3& n) {
    if (t > kRayEpsilon && (!best || t < best->t)) best = Hit{t, n};
  };
  const double ox = r.origin.x - center.x, oz = r.origin.z - center.z;
  const double a = r.dir.x * r.dir.x + r.dir.z * r.dir.z;
  if (a > 1e-15) {
    const double b = ox * r.dir.x + oz * r.dir.z;
    const double c = ox * ox + oz * oz - radius * radius;
    const double disc = b * b - a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / a, (-b + sq) / a}) {
        const Vec3 p = r.at(t);
        if (std::abs(p.y - center.y) <= half_height) {
          consider(t, Vec3{p.x - center.x, 0.0, p.z - center.z} / radius);
        }
      }
    }
  }
  if (std::abs(r.dir.y) > 1e-15) {
    for (double sign : {-1.0, 1.0}) {
      const double cy = center.y + sign * half_height;
      const double t = (cy - r.origin.y) / r.dir.y;
      const Vec3 p = r.at(t);
      const double dx = p.x - center.x, dz = p.z - center.z;
      if (dx * dx + dz * dz <= radius * radius) consider(t, Vec3{0.0, sign, 0.0});
    }
  }
  return best;
}

/// Infinite plane; the returned normal faces the ray origin's side.
inline std::optional<Hit> intersect_plane(const Ray& r, const Plane& p) {
  const double denom = dot(r.dir, p.normal);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = dot(p.origin - r.origin, p.normal) / denom;
  if (t <= kRayEpsilon) return std::nullopt;
  return Hit{t, denom < 0.0 ? p.normal : -p.normal};
}

/// Rectangle centred at `plane.origin`, spanning +-half_u along `u` and +-half_v along `v`.
inline std::optional<Hit> intersect_rect(const Ray& r, const Plane& p, const Vec3& u, double half_u, const Vec3& v,
                                         double half_v) {
  auto h = intersect_plane(r, p);
  if (!h) return std::nullopt;
  const Vec3 d = r.at(h->t) - p.origin;
  if (std::abs(dot(d, u)) > half_u || std::abs(dot(d, v)) > half_v) return std::nullopt;
  return h;
}

}  // namespace mf
