#pragma once

// Procedural mirror-scene composition: a vertical mirror at the origin, an
// object normalized into a unit cube in front of it, a textured floor, a
// gradient environment of the same indoor/outdoor category, an area light
// above and behind the object, and a pool of camera poses interpolated
// between two extremes.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mirrorfusion/scene/geometry.hpp"

namespace mf {

// ---------------------------------------------------------------------------
// Scene description

enum class PrimitiveKind { sphere, box, cylinder };

NLOHMANN_JSON_SERIALIZE_ENUM(PrimitiveKind, {{PrimitiveKind::sphere, "sphere"},
                                             {PrimitiveKind::box, "box"},
                                             {PrimitiveKind::cylinder, "cylinder"}})

inline void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }
inline void from_json(const nlohmann::json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw nlohmann::json::type_error::create(302, "expected [x,y,z]", &j);
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

/// One primitive. Boxes use `half_extents` and `yaw_deg`; spheres `radius`;
/// cylinders (vertical) `radius` and `half_height`.
struct Part {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 center;
  Vec3 half_extents;
  double radius = 0.0;
  double half_height = 0.0;
  double yaw_deg = 0.0;
  Vec3 albedo{0.7, 0.7, 0.7};
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Part, kind, center, half_extents, radius, half_height, yaw_deg,
                                                albedo)

/// Object before placement (arbitrary units, local frame).
struct ObjectDesc {
  std::string object_id;
  std::string category;
  std::string color_name;
  std::vector<Part> parts;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ObjectDesc, object_id, category, color_name, parts)

/// Object after placement: parts in world coordinates.
struct ObjectSpec {
  std::string object_id;
  std::string category;
  std::vector<Part> parts;
  double y_rotation_deg = 0.0;
  double scale = 1.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ObjectSpec, object_id, category, parts, y_rotation_deg, scale)

struct MirrorSpec {
  Vec3 center{0.0, 1.25, 0.0};
  Vec3 normal{1.0, 0.0, 0.0};
  double width = 2.0;
  double height = 2.5;
  int frame_style = 0;
  double reflectance = 0.92;

  Plane plane() const { return {center, normal}; }
  /// In-plane axes: `u` horizontal (width), `v` vertical (height).
  Vec3 u_axis() const { return normalize(cross(Vec3{0.0, 1.0, 0.0}, normal)); }
  Vec3 v_axis() const { return normalize(cross(normal, u_axis())); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MirrorSpec, center, normal, width, height, frame_style, reflectance)

enum class TextureKind { checker, stripes, noise };

NLOHMANN_JSON_SERIALIZE_ENUM(TextureKind, {{TextureKind::checker, "checker"},
                                           {TextureKind::stripes, "stripes"},
                                           {TextureKind::noise, "noise"}})

struct FloorSpec {
  int texture_id = 0;
  TextureKind texture = TextureKind::checker;
  Vec3 color_a{0.8, 0.8, 0.8};
  Vec3 color_b{0.3, 0.3, 0.3};
  double scale = 0.5;
  std::string category = "indoor";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FloorSpec, texture_id, texture, color_a, color_b, scale, category)

struct BackgroundSpec {
  int environment_id = 0;
  Vec3 top{0.6, 0.7, 0.9};
  Vec3 bottom{0.9, 0.9, 0.85};
  std::string category = "indoor";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BackgroundSpec, environment_id, top, bottom, category)

struct AreaLightSpec {
  Vec3 position;
  Vec3 normal;  // emission direction
  double size = 0.6;
  double intensity = 12.0;
  double ambient = 0.3;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AreaLightSpec, position, normal, size, intensity, ambient)

struct CameraPose {
  Vec3 position;
  Vec3 forward;  // unit
  Vec3 look_at;
  double vfov_deg = 50.0;
  int pool_index = -1;

  Vec3 right() const { return normalize(cross(forward, Vec3{0.0, 1.0, 0.0})); }
  Vec3 up() const { return cross(right(), forward); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CameraPose, position, forward, look_at, vfov_deg, pool_index)

struct SceneSpec {
  std::string scene_id;
  std::uint64_t seed = 0;
  ObjectSpec object;
  bool has_object = true;
  MirrorSpec mirror;
  FloorSpec floor;
  BackgroundSpec background;
  AreaLightSpec light;
  std::vector<CameraPose> cameras;
  std::string prompt;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SceneSpec, scene_id, seed, object, has_object, mirror, floor,
                                                background, light, cameras, prompt)

// ---------------------------------------------------------------------------
// Layout constants

struct ForgeConfig {
  /// Distance from the mirror plane to the centre of the object's unit cube.
  double object_distance = 1.5;
  /// Camera extremes, expressed around `camera_target` by azimuth (degrees
  /// from the mirror normal, toward +z), horizontal radius and height.
  Vec3 camera_target{0.3, 0.55, 0.0};
  double extreme_azimuth_a = 18.0;
  double extreme_azimuth_b = 32.0;
  double camera_radius = 5.5;
  double camera_height = 2.1;
  double vfov_deg = 50.0;
  int pool_size = 19;
  int cameras_per_scene = 3;
};

inline Vec3 object_region_center(const ForgeConfig& cfg, const MirrorSpec& m = {}) {
  return Vec3{m.center.x, 0.5, m.center.z} + m.normal * cfg.object_distance;
}

// ---------------------------------------------------------------------------
// Bounding volumes

struct Aabb {
  Vec3 lo{1e300, 1e300, 1e300};
  Vec3 hi{-1e300, -1e300, -1e300};

  void expand(const Vec3& c, const Vec3& half) {
    lo = {std::min(lo.x, c.x - half.x), std::min(lo.y, c.y - half.y), std::min(lo.z, c.z - half.z)};
    hi = {std::max(hi.x, c.x + half.x), std::max(hi.y, c.y + half.y), std::max(hi.z, c.z + half.z)};
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return (lo + hi) * 0.5; }
  double max_extent() const {
    const Vec3 e = extent();
    return std::max({e.x, e.y, e.z});
  }
};

inline Vec3 part_half_extent(const Part& p) {
  switch (p.kind) {
    case PrimitiveKind::sphere:
      return {p.radius, p.radius, p.radius};
    case PrimitiveKind::cylinder:
      return {p.radius, p.half_height, p.radius};
    case PrimitiveKind::box: {
      const double c = std::abs(std::cos(deg2rad(p.yaw_deg))), s = std::abs(std::sin(deg2rad(p.yaw_deg)));
      const Vec3& h = p.half_extents;
      return {c * h.x + s * h.z, h.y, s * h.x + c * h.z};
    }
  }
  return {};
}

inline Aabb bounds(const std::vector<Part>& parts) {
  Aabb b;
  for (const auto& p : parts) b.expand(p.center, part_half_extent(p));
  return b;
}

struct BoundingSphere {
  Vec3 center;
  double radius = 0.0;
};

inline BoundingSphere bounding_sphere(const std::vector<Part>& parts) {
  const Aabb b = bounds(parts);
  return {b.center(), 0.5 * norm(b.extent())};
}

/// Object reflected through a plane (used to build mirrored virtual scenes).
inline ObjectSpec mirror_object(const ObjectSpec& obj, const Plane& plane) {
  ObjectSpec out = obj;
  for (auto& p : out.parts) {
    p.center = reflect_point(p.center, plane);
    // A yaw rotation mirrors to its negative under reflection through a
    // vertical plane with +x normal; boxes are symmetric under their own axes.
    p.yaw_deg = -p.yaw_deg;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Object family

inline const std::vector<std::string>& object_categories() {
  static const std::vector<std::string> cats{"ball",  "box",    "mug",      "chair", "table",   "lamp",
                                             "snowman", "bottle", "dumbbell", "stool", "bookshelf", "cone"};
  return cats;
}

/// Relative sampling frequency per category (same order as object_categories()).
inline const std::vector<double>& category_weights() {
  static const std::vector<double> w{6, 5, 4, 4, 3, 2, 2, 2, 1, 1, 1, 1};
  return w;
}

struct NamedColor {
  const char* name;
  Vec3 rgb;
};

inline const std::array<NamedColor, 8>& palette() {
  static const std::array<NamedColor, 8> p{{{"red", {0.85, 0.15, 0.12}},
                                            {"green", {0.2, 0.7, 0.25}},
                                            {"blue", {0.15, 0.3, 0.85}},
                                            {"yellow", {0.9, 0.8, 0.15}},
                                            {"white", {0.92, 0.92, 0.9}},
                                            {"black", {0.08, 0.08, 0.08}},
                                            {"orange", {0.95, 0.5, 0.1}},
                                            {"purple", {0.55, 0.2, 0.7}}}};
  return p;
}

/// Procedural object of a category, randomized proportions.
inline ObjectDesc make_object(const std::string& category, const std::string& object_id, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto r = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const auto& pal = palette();
  const NamedColor main = pal[std::uniform_int_distribution<std::size_t>(0, pal.size() - 1)(rng)];
  const NamedColor accent = pal[std::uniform_int_distribution<std::size_t>(0, pal.size() - 1)(rng)];

  ObjectDesc o;
  o.object_id = object_id;
  o.category = category;
  o.color_name = main.name;
  auto sphere = [&](Vec3 c, double rad, Vec3 col) {
    Part p;
    p.kind = PrimitiveKind::sphere;
    p.center = c;
    p.radius = rad;
    p.albedo = col;
    o.parts.push_back(p);
  };
  auto box = [&](Vec3 c, Vec3 h, Vec3 col, double yaw = 0.0) {
    Part p;
    p.kind = PrimitiveKind::box;
    p.center = c;
    p.half_extents = h;
    p.yaw_deg = yaw;
    p.albedo = col;
    o.parts.push_back(p);
  };
  auto cyl = [&](Vec3 c, double rad, double hh, Vec3 col) {
    Part p;
    p.kind = PrimitiveKind::cylinder;
    p.center = c;
    p.radius = rad;
    p.half_height = hh;
    p.albedo = col;
    o.parts.push_back(p);
  };

  if (category == "ball") {
    sphere({0, 0, 0}, r(0.5, 1.5), main.rgb);
  } else if (category == "box") {
    box({0, 0, 0}, {r(0.3, 1.0), r(0.3, 1.0), r(0.3, 1.0)}, main.rgb);
  } else if (category == "mug") {
    const double rad = r(0.3, 0.45), hh = r(0.35, 0.5);
    cyl({0, 0, 0}, rad, hh, main.rgb);
    // handle approximated by three bent boxes
    const double t = 0.05;
    box({rad + 0.12, hh * 0.55, 0}, {0.12, t, t}, main.rgb);
    box({rad + 0.12, -hh * 0.55, 0}, {0.12, t, t}, main.rgb);
    box({rad + 0.24, 0, 0}, {t, hh * 0.55 + t, t}, main.rgb);
  } else if (category == "chair") {
    const double w = r(0.35, 0.5), seat = r(0.4, 0.55), leg = 0.04;
    box({0, seat, 0}, {w, 0.04, w}, main.rgb);
    box({-w + 0.04, seat + r(0.35, 0.6) / 2 + 0.04, 0}, {0.04, r(0.35, 0.6) / 2, w}, main.rgb);
    for (double sx : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0}) box({sx * (w - leg), seat / 2, sz * (w - leg)}, {leg, seat / 2, leg}, accent.rgb);
  } else if (category == "table") {
    const double w = r(0.5, 0.8), d = r(0.35, 0.6), hgt = r(0.5, 0.8), leg = 0.05;
    box({0, hgt, 0}, {w, 0.04, d}, main.rgb);
    for (double sx : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0}) box({sx * (w - leg), hgt / 2, sz * (d - leg)}, {leg, hgt / 2, leg}, accent.rgb);
  } else if (category == "lamp") {
    const double pole = r(0.6, 1.0);
    cyl({0, 0.03, 0}, r(0.2, 0.3), 0.03, accent.rgb);
    cyl({0, pole / 2, 0}, 0.03, pole / 2, accent.rgb);
    sphere({0, pole + 0.15, 0}, r(0.15, 0.25), main.rgb);
  } else if (category == "snowman") {
    const double a = r(0.35, 0.45), b = a * r(0.6, 0.8), c = b * r(0.6, 0.8);
    sphere({0, a, 0}, a, {0.95, 0.95, 0.95});
    sphere({0, 2 * a + b * 0.8, 0}, b, {0.95, 0.95, 0.95});
    sphere({0, 2 * a + 1.6 * b + c * 0.8, 0}, c, {0.95, 0.95, 0.95});
    box({c * 0.9, 2 * a + 1.6 * b + c * 0.8, 0}, {c * 0.4, 0.03, 0.03}, {0.95, 0.5, 0.1});
  } else if (category == "bottle") {
    const double rad = r(0.15, 0.25), hh = r(0.4, 0.6);
    cyl({0, hh, 0}, rad, hh, main.rgb);
    cyl({0, 2 * hh + 0.12, 0}, rad * 0.4, 0.12, main.rgb);
    cyl({0, 2 * hh + 0.27, 0}, rad * 0.45, 0.03, accent.rgb);
  } else if (category == "dumbbell") {
    const double len = r(0.4, 0.7), rad = r(0.15, 0.25);
    box({0, rad, 0}, {len, 0.04, 0.04}, accent.rgb);
    sphere({-len, rad, 0}, rad, main.rgb);
    sphere({len, rad, 0}, rad, main.rgb);
  } else if (category == "stool") {
    const double rad = r(0.25, 0.4), hgt = r(0.4, 0.7);
    cyl({0, hgt, 0}, rad, 0.04, main.rgb);
    cyl({0, hgt / 2, 0}, 0.05, hgt / 2, accent.rgb);
    cyl({0, 0.02, 0}, rad * 0.8, 0.02, accent.rgb);
  } else if (category == "bookshelf") {
    const double w = r(0.4, 0.6), hgt = r(0.8, 1.2), d = 0.2;
    box({-w, hgt / 2, 0}, {0.03, hgt / 2, d}, main.rgb);
    box({w, hgt / 2, 0}, {0.03, hgt / 2, d}, main.rgb);
    for (int k = 0; k < 4; ++k) box({0, k * hgt / 3.0, 0}, {w, 0.03, d}, main.rgb);
    for (int k = 0; k < 5; ++k) box({-w + 0.1 + k * 0.18, hgt / 6 + 0.03, 0}, {0.05, hgt / 6 - 0.04, 0.15}, pal[k % 8].rgb);
  } else if (category == "cone") {
    // stacked cylinders of decreasing radius
    const double base = r(0.35, 0.5);
    for (int k = 0; k < 5; ++k) cyl({0, 0.1 + 0.2 * k, 0}, base * (1.0 - 0.18 * k), 0.1, k % 2 ? accent.rgb : main.rgb);
  } else {
    throw InvalidArgument("make_object: unknown category '" + category + "'");
  }
  return o;
}

/// Samples a category according to category_weights().
inline std::string sample_category(std::mt19937_64& rng) {
  const auto& w = category_weights();
  std::discrete_distribution<std::size_t> d(w.begin(), w.end());
  return object_categories()[d(rng)];
}

// ---------------------------------------------------------------------------
// Floors, environments, light

inline FloorSpec make_floor(const std::string& category, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FloorSpec f;
  f.category = category;
  f.texture_id = std::uniform_int_distribution<int>(0, 63)(rng);
  f.texture = static_cast<TextureKind>(f.texture_id % 3);
  if (category == "indoor") {
    const Vec3 wood{0.55 + 0.2 * u(rng), 0.4 + 0.15 * u(rng), 0.25 + 0.1 * u(rng)};
    f.color_a = wood;
    f.color_b = wood * (0.55 + 0.2 * u(rng));
  } else {
    const Vec3 grass{0.2 + 0.2 * u(rng), 0.45 + 0.2 * u(rng), 0.15 + 0.1 * u(rng)};
    const Vec3 stone{0.5 + 0.2 * u(rng), 0.5 + 0.15 * u(rng), 0.45 + 0.1 * u(rng)};
    f.color_a = u(rng) < 0.5 ? grass : stone;
    f.color_b = f.color_a * (0.5 + 0.25 * u(rng));
  }
  f.scale = 0.25 + 0.5 * u(rng);
  return f;
}

inline BackgroundSpec make_background(const std::string& category, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BackgroundSpec b;
  b.category = category;
  b.environment_id = std::uniform_int_distribution<int>(0, 63)(rng);
  if (category == "indoor") {
    b.top = Vec3{0.75, 0.72, 0.68} * (0.8 + 0.2 * u(rng));
    b.bottom = Vec3{0.55, 0.5, 0.45} * (0.8 + 0.2 * u(rng));
  } else {
    b.top = Vec3{0.35 + 0.1 * u(rng), 0.55 + 0.1 * u(rng), 0.9};
    b.bottom = Vec3{0.85, 0.87, 0.9} * (0.85 + 0.15 * u(rng));
  }
  return b;
}

/// Area light above and behind the object (away from the mirror), tilted 45
/// degrees down toward the object and the mirror.
inline AreaLightSpec make_light(const Vec3& object_center, const MirrorSpec& m) {
  AreaLightSpec l;
  const double offset = 1.3;
  l.position = object_center + m.normal * offset + Vec3{0.0, offset, 0.0};
  l.normal = normalize(-m.normal + Vec3{0.0, -1.0, 0.0});
  return l;
}

// ---------------------------------------------------------------------------
// Cameras

inline CameraPose look_at_pose(const Vec3& position, const Vec3& target, double vfov_deg) {
  CameraPose p;
  p.position = position;
  p.look_at = target;
  p.forward = normalize(target - position);
  p.vfov_deg = vfov_deg;
  return p;
}

inline std::array<CameraPose, 2> extreme_poses(const ForgeConfig& cfg) {
  auto pose = [&](double az_deg) {
    const double a = deg2rad(az_deg);
    const Vec3 pos = cfg.camera_target + Vec3{cfg.camera_radius * std::cos(a), cfg.camera_height - cfg.camera_target.y,
                                              cfg.camera_radius * std::sin(a)};
    return look_at_pose(pos, cfg.camera_target, cfg.vfov_deg);
  };
  return {pose(cfg.extreme_azimuth_a), pose(cfg.extreme_azimuth_b)};
}

/// True when the sphere lies entirely inside the (square) view frustum.
inline bool sphere_in_frustum(const CameraPose& cam, const BoundingSphere& s) {
  const Vec3 d = s.center - cam.position;
  const double z = dot(d, cam.forward), x = dot(d, cam.right()), y = dot(d, cam.up());
  const double half = deg2rad(cam.vfov_deg) / 2.0;
  const double c = std::cos(half), sn = std::sin(half);
  if (z <= s.radius) return false;
  for (double v : {x, -x, y, -y}) {
    if (-v * c + z * sn < s.radius) return false;
  }
  return true;
}

/// The object and its mirrored virtual image both project inside the frame.
inline bool pose_sees_object_and_reflection(const CameraPose& cam, const SceneSpec& spec) {
  if (!spec.has_object || spec.object.parts.empty()) return true;
  const BoundingSphere s = bounding_sphere(spec.object.parts);
  const BoundingSphere v{reflect_point(s.center, spec.mirror.plane()), s.radius};
  return sphere_in_frustum(cam, s) && sphere_in_frustum(cam, v);
}

/// `n` poses: positions linearly interpolated, viewing directions spherically
/// interpolated between the two extremes.
inline std::vector<CameraPose> camera_pool(const SceneSpec& spec, int n, const ForgeConfig& cfg = {}) {
  if (n < 2) throw InvalidArgument("camera_pool: n must be >= 2");
  const auto ext = extreme_poses(cfg);
  for (const auto& e : ext) {
    if (!pose_sees_object_and_reflection(e, spec)) {
      throw InvalidArgument("camera_pool: extreme pose cannot see object and reflection in scene '" + spec.scene_id +
                            "'");
    }
  }
  std::vector<CameraPose> pool;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    CameraPose p;
    if (i == 0) {
      p = ext[0];
    } else if (i == n - 1) {
      p = ext[1];
    } else {
      p.position = lerp(ext[0].position, ext[1].position, t);
      p.forward = normalize(slerp(ext[0].forward, ext[1].forward, t));
      p.vfov_deg = cfg.vfov_deg;
      p.look_at = p.position + p.forward * norm(lerp(ext[0].look_at, ext[1].look_at, t) - p.position);
    }
    p.pool_index = i;
    if (!pose_sees_object_and_reflection(p, spec)) {
      throw InvalidArgument("camera_pool: interpolated pose " + std::to_string(i) + " fails visibility");
    }
    pool.push_back(p);
  }
  return pool;
}

/// `k` distinct poses drawn without replacement.
inline std::vector<CameraPose> pick_cameras(const std::vector<CameraPose>& pool, int k, std::uint64_t seed) {
  if (k < 0 || k > static_cast<int>(pool.size())) {
    throw InvalidArgument("pick_cameras: k=" + std::to_string(k) + " exceeds pool of " + std::to_string(pool.size()));
  }
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  }
  std::vector<CameraPose> out;
  for (int i = 0; i < k; ++i) out.push_back(pool[idx[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// Composition

/// Rotates the object about +y, scales it uniformly so its largest bounding
/// extent is exactly 1, and rests it on the floor centred in the object region.
inline ObjectSpec place_object(const ObjectDesc& desc, double y_rotation_deg, const Vec3& region_center) {
  if (desc.parts.empty()) throw InvalidArgument("compose_scene: object '" + desc.object_id + "' has no parts");
  ObjectSpec o;
  o.object_id = desc.object_id;
  o.category = desc.category;
  o.y_rotation_deg = y_rotation_deg;
  const double rad = deg2rad(y_rotation_deg);
  for (Part p : desc.parts) {
    p.center = rotate_y(p.center, rad);
    p.yaw_deg += y_rotation_deg;
    o.parts.push_back(p);
  }
  const Aabb b = bounds(o.parts);
  const double ext = b.max_extent();
  if (!(ext > 1e-12) || !std::isfinite(ext)) {
    throw InvalidArgument("compose_scene: object '" + desc.object_id + "' is degenerate (zero extent)");
  }
  o.scale = 1.0 / ext;
  const Vec3 c = b.center();
  const Vec3 shift{region_center.x, region_center.y - 0.5 + 0.5 * b.extent().y * o.scale, region_center.z};
  for (auto& p : o.parts) {
    p.center = (p.center - c) * o.scale + shift;
    p.radius *= o.scale;
    p.half_height *= o.scale;
    p.half_extents = p.half_extents * o.scale;
  }
  return o;
}

inline std::string make_prompt(const ObjectDesc& desc, const FloorSpec& floor) {
  static const char* tex[] = {"checkered", "striped", "speckled"};
  return "a perfect plane mirror reflection of a " + desc.color_name + " " + desc.category + " on a " +
         tex[static_cast<int>(floor.texture)] + " " + (floor.category == "indoor" ? "indoor" : "outdoor") + " floor";
}

inline SceneSpec compose_scene(const ObjectDesc& desc, std::uint64_t seed, const ForgeConfig& cfg = {},
                               const std::string& scene_id = "") {
  std::mt19937_64 rng(seed);
  SceneSpec s;
  s.scene_id = scene_id.empty() ? "scene_" + desc.object_id : scene_id;
  s.seed = seed;
  const double angle = std::uniform_real_distribution<double>(0.0, 360.0)(rng);
  s.object = place_object(desc, angle, object_region_center(cfg, s.mirror));
  s.mirror.frame_style = std::uniform_int_distribution<int>(0, 3)(rng);
  const std::string cat = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 ? "indoor" : "outdoor";
  s.floor = make_floor(cat, rng);
  s.background = make_background(cat, rng);
  s.light = make_light(object_region_center(cfg, s.mirror), s.mirror);
  s.prompt = make_prompt(desc, s.floor);
  const auto pool = camera_pool(s, cfg.pool_size, cfg);
  s.cameras = pick_cameras(pool, cfg.cameras_per_scene, rng());
  return s;
}

/// Scene with the object replaced by its mirror image and no object on the
/// real side; rendered with the mirror removed it shows the virtual object.
inline SceneSpec mirrored_virtual_scene(const SceneSpec& s) {
  SceneSpec v = s;
  v.object = mirror_object(s.object, s.mirror.plane());
  return v;
}

// ---------------------------------------------------------------------------
// Material graphs and the spurious-object filter

struct MaterialInput {
  std::string name;
  std::string linked;  // name of the linked node, empty when unlinked
};

struct MaterialNode {
  std::string name;
  std::vector<MaterialInput> inputs;
};

struct Material {
  std::vector<MaterialNode> nodes;
};

struct Mesh {
  std::vector<Material> materials;
};

struct MaterialGraph {
  std::vector<Mesh> children;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MaterialInput, name, linked)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MaterialNode, name, inputs)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Material, nodes)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Mesh, materials)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MaterialGraph, children)

/// An object is spurious (its reflection does not show in a mirror) when some
/// material node is a "Mix-Shader" whose "Fac" input is driven by a
/// "Light Path" node.
inline bool is_spurious(const MaterialGraph& g) {
  for (const auto& child : g.children) {
    for (const auto& mat : child.materials) {
      for (const auto& node : mat.nodes) {
        if (node.name != "Mix-Shader") continue;
        for (const auto& in : node.inputs) {
          if (in.name == "Fac" && in.linked == "Light Path") return true;
        }
      }
    }
  }
  return false;
}

struct CatalogEntry {
  std::string object_id;
  std::string category;
  std::string source = "procedural";
  bool spurious = false;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CatalogEntry, object_id, category, source, spurious)

struct Catalog {
  std::vector<CatalogEntry> entries;

  void validate() const {
    std::vector<std::string> ids;
    for (const auto& e : entries) ids.push_back(e.object_id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw InvalidArgument("catalog: duplicate object id");
    }
  }
};

struct FilterStats {
  std::size_t kept = 0;
  std::size_t spurious = 0;
  std::size_t missing_graph = 0;
  std::vector<std::string> missing_ids;
};

/// Keeps the entries whose material graph is not spurious. Entries without a
/// graph are skipped and counted.
template <typename GraphMap>
Catalog filter_catalog(const Catalog& catalog, const GraphMap& graphs, FilterStats* stats = nullptr) {
  catalog.validate();
  FilterStats st;
  Catalog out;
  for (const auto& e : catalog.entries) {
    const auto it = graphs.find(e.object_id);
    if (it == graphs.end()) {
      ++st.missing_graph;
      st.missing_ids.push_back(e.object_id);
      continue;
    }
    if (is_spurious(it->second)) {
      ++st.spurious;
      continue;
    }
    CatalogEntry kept = e;
    kept.spurious = false;
    out.entries.push_back(kept);
    ++st.kept;
  }
  if (stats != nullptr) *stats = st;
  return out;
}

/// Plausible material graph for a procedural object; with probability
/// `spurious_rate` it contains the light-path mix that hides reflections.
inline MaterialGraph make_material_graph(std::uint64_t seed, double spurious_rate) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MaterialGraph g;
  const int n_children = 1 + static_cast<int>(u(rng) * 3);
  for (int c = 0; c < n_children; ++c) {
    Mesh mesh;
    Material mat;
    mat.nodes.push_back({"Principled BSDF", {{"Base Color", "Image Texture"}, {"Roughness", ""}}});
    mat.nodes.push_back({"Material Output", {{"Surface", "Principled BSDF"}}});
    mesh.materials.push_back(mat);
    g.children.push_back(mesh);
  }
  if (u(rng) < spurious_rate) {
    Material mix;
    mix.nodes.push_back({"Light Path", {}});
    mix.nodes.push_back({"Mix-Shader", {{"Fac", "Light Path"}, {"Shader", "Transparent BSDF"}, {"Shader", "Emission"}}});
    g.children.back().materials.push_back(mix);
  }
  return g;
}

}  // namespace mf
