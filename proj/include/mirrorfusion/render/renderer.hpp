#pragma once

// Analytic ray tracer for SceneSpec: Lambertian floor and object lit by a
// sampled area light plus ambient, a perfect planar mirror, and a vertical
// gradient environment. Label passes (depth, normals, instance ids, mirror
// mask) come from the centre ray of each pixel; colour averages jittered rays.

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "mirrorfusion/depth_conditioning.hpp"
#include "mirrorfusion/raster.hpp"
#include "mirrorfusion/scene/scene_forge.hpp"

namespace mf {

enum InstanceId : std::uint16_t {
  kInstanceBackground = 0,
  kInstanceFloor = 1,
  kInstanceMirror = 2,
  kInstanceObject = 3,
  kInstanceObjectReflection = 4,
  kInstanceFloorReflection = 5,
};

struct RenderSample {
  PixelImage rgb;
  DepthMap depth;           // first-hit distance, +inf where nothing is hit
  Raster<float> normals;    // unit where hit, zero on background
  Raster<std::uint16_t> instances;
  MirrorMask mirror_mask;
  PixelImage empty_mirror;  // same view with the object hidden from mirror rays (may be empty)
  nlohmann::json meta;
};

struct RenderOptions {
  int width = 64;
  int height = 64;
  int spp = 4;
  int light_samples = 4;
  int max_depth = 2;
  bool mirror = true;
  /// When false the object is invisible to rays leaving the mirror (it still
  /// casts shadows); used for the empty-mirror reference.
  bool object_in_reflections = true;
  bool with_empty_mirror = true;
};

namespace render_detail {

enum class Surface { none, floor, object, mirror };

struct SurfaceHit {
  Surface kind = Surface::none;
  double t = 0.0;
  Vec3 normal;
  Vec3 albedo;
};

inline constexpr double kFloorHalfExtent = 20.0;

inline std::optional<Hit> hit_part(const Ray& r, const Part& p) {
  switch (p.kind) {
    case PrimitiveKind::sphere:
      return intersect_sphere(r, p.center, p.radius);
    case PrimitiveKind::box:
      return intersect_box(r, p.center, p.half_extents, deg2rad(p.yaw_deg));
    case PrimitiveKind::cylinder:
      return intersect_cylinder(r, p.center, p.radius, p.half_height);
  }
  return std::nullopt;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double hash01(std::int64_t i, std::int64_t j, std::uint64_t seed) {
  const std::uint64_t h = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(j));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

class Tracer {
 public:
  Tracer(const SceneSpec& spec, const RenderOptions& opt) : spec_(spec), opt_(opt) {
    const auto& m = spec.mirror;
    mirror_plane_ = m.plane();
    require_unit(m.normal, "render: mirror");
    mu_ = m.u_axis();
    mv_ = m.v_axis();
    lu_ = normalize(cross(spec.light.normal, std::abs(spec.light.normal.y) > 0.99 ? Vec3{1, 0, 0} : Vec3{0, 1, 0}));
    lv_ = cross(spec.light.normal, lu_);
  }

  SurfaceHit closest(const Ray& r, bool with_object, bool with_mirror) const {
    SurfaceHit best;
    auto take = [&](Surface kind, const Hit& h, const Vec3& albedo) {
      if (best.kind == Surface::none || h.t < best.t) best = {kind, h.t, h.normal, albedo};
    };
    if (with_object && spec_.has_object) {
      for (const auto& p : spec_.object.parts) {
        if (auto h = hit_part(r, p)) take(Surface::object, *h, p.albedo);
      }
    }
    if (with_mirror && opt_.mirror) {
      if (auto h = intersect_rect(r, mirror_plane_, mu_, spec_.mirror.width / 2, mv_, spec_.mirror.height / 2)) {
        take(Surface::mirror, *h, {});
      }
    }
    if (auto h = intersect_plane(r, Plane{{0, 0, 0}, {0, 1, 0}})) {
      const Vec3 p = r.at(h->t);
      if (std::abs(p.x) <= kFloorHalfExtent && std::abs(p.z) <= kFloorHalfExtent) {
        take(Surface::floor, *h, floor_albedo(p));
      }
    }
    return best;
  }

  Vec3 floor_albedo(const Vec3& p) const {
    const FloorSpec& f = spec_.floor;
    const auto i = static_cast<std::int64_t>(std::floor(p.x / f.scale));
    const auto j = static_cast<std::int64_t>(std::floor(p.z / f.scale));
    switch (f.texture) {
      case TextureKind::checker:
        return ((i + j) & 1) ? f.color_a : f.color_b;
      case TextureKind::stripes:
        return (i & 1) ? f.color_a : f.color_b;
      case TextureKind::noise:
        return lerp(f.color_a, f.color_b, hash01(i, j, static_cast<std::uint64_t>(f.texture_id)));
    }
    return f.color_a;
  }

  Vec3 environment(const Vec3& dir) const {
    const double t = std::clamp(0.5 * (dir.y + 1.0), 0.0, 1.0);
    return lerp(spec_.background.bottom, spec_.background.top, t);
  }

  Vec3 direct_light(const Vec3& p, const Vec3& n, std::mt19937_64& rng) const {
    const AreaLightSpec& l = spec_.light;
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const int k = std::max(1, opt_.light_samples);
    double e = 0.0;
    for (int s = 0; s < k; ++s) {
      const Vec3 q = l.position + lu_ * (u(rng) * l.size) + lv_ * (u(rng) * l.size);
      const Vec3 d = q - p;
      const double dist = norm(d);
      const Vec3 w = d / dist;
      const double cos_s = dot(n, w);
      const double cos_l = -dot(l.normal, w);
      if (cos_s <= 0.0 || cos_l <= 0.0) continue;
      const SurfaceHit occ = closest(Ray{p + n * 1e-6, w}, true, true);
      if (occ.kind != Surface::none && occ.kind != Surface::floor && occ.t < dist) continue;
      e += cos_s * cos_l / (dist * dist);
    }
    return Vec3{1, 1, 1} * (l.intensity * l.size * l.size * e / (k * std::numbers::pi));
  }

  /// Radiance along `r`; `in_reflection` hides the object when requested.
  Vec3 radiance(const Ray& r, int depth, bool in_reflection, std::mt19937_64& rng) const {
    const bool with_object = !in_reflection || opt_.object_in_reflections;
    const SurfaceHit h = closest(r, with_object, true);
    if (h.kind == Surface::none) return environment(r.dir);
    const Vec3 p = r.at(h.t);
    const Vec3 n = dot(h.normal, r.dir) < 0.0 ? h.normal : -h.normal;
    if (h.kind == Surface::mirror) {
      if (depth >= opt_.max_depth) return {};
      const Ray refl{p + n * 1e-7, reflect_direction(r.dir, n)};
      return radiance(refl, depth + 1, true, rng) * spec_.mirror.reflectance;
    }
    const Vec3 light = direct_light(p, n, rng) + Vec3{1, 1, 1} * spec_.light.ambient;
    return hadamard(h.albedo, light);
  }

  const Plane& mirror_plane() const { return mirror_plane_; }

 private:
  const SceneSpec& spec_;
  RenderOptions opt_;
  Plane mirror_plane_;
  Vec3 mu_, mv_, lu_, lv_;
};

inline Ray camera_ray(const CameraPose& cam, double px, double py, int width, int height) {
  const double tan_half = std::tan(deg2rad(cam.vfov_deg) / 2.0);
  const double aspect = static_cast<double>(width) / height;
  const double u = (2.0 * px / width - 1.0) * tan_half * aspect;
  const double v = (1.0 - 2.0 * py / height) * tan_half;
  return {cam.position, normalize(cam.forward + cam.right() * u + cam.up() * v)};
}

inline PixelImage shade(const SceneSpec& spec, const CameraPose& cam, const RenderOptions& opt, std::uint64_t seed) {
  const Tracer tracer(spec, opt);
  PixelImage img(opt.height, opt.width, 3);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (int y = 0; y < opt.height; ++y) {
    for (int x = 0; x < opt.width; ++x) {
      std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(y) * opt.width + x));
      Vec3 acc;
      const int spp = std::max(1, opt.spp);
      for (int s = 0; s < spp; ++s) {
        const double jx = spp == 1 ? 0.5 : jitter(rng), jy = spp == 1 ? 0.5 : jitter(rng);
        acc += tracer.radiance(camera_ray(cam, x + jx, y + jy, opt.width, opt.height), 0, false, rng);
      }
      acc = acc / spp;
      img(y, x, 0) = static_cast<float>(std::clamp(acc.x, 0.0, 1.0));
      img(y, x, 1) = static_cast<float>(std::clamp(acc.y, 0.0, 1.0));
      img(y, x, 2) = static_cast<float>(std::clamp(acc.z, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace render_detail

inline nlohmann::json sample_meta(const SceneSpec& spec, int camera_index, const RenderOptions& opt) {
  return {{"scene_id", spec.scene_id},
          {"camera_index", camera_index},
          {"camera", spec.cameras[camera_index]},
          {"prompt", spec.prompt},
          {"object_id", spec.object.object_id},
          {"object_category", spec.has_object ? spec.object.category : std::string()},
          {"floor_category", spec.floor.category},
          {"background_category", spec.background.category},
          {"width", opt.width},
          {"height", opt.height},
          {"spp", opt.spp}};
}

inline RenderSample render(const SceneSpec& spec, int camera_index, const RenderOptions& opt = {}) {
  if (camera_index < 0 || camera_index >= static_cast<int>(spec.cameras.size())) {
    throw InvalidArgument("render: camera index " + std::to_string(camera_index) + " out of range for scene '" +
                          spec.scene_id + "' with " + std::to_string(spec.cameras.size()) + " cameras");
  }
  if (opt.width <= 0 || opt.height <= 0 || opt.spp <= 0) throw InvalidArgument("render: bad resolution or spp");
  using namespace render_detail;
  const CameraPose& cam = spec.cameras[camera_index];
  const Tracer tracer(spec, opt);
  RenderSample s;
  const int H = opt.height, W = opt.width;
  s.depth = DepthMap(H, W, 1, std::numeric_limits<float>::infinity());
  s.normals = Raster<float>(H, W, 3);
  s.instances = Raster<std::uint16_t>(H, W, 1);
  s.mirror_mask = MirrorMask(H, W, 1);

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Ray r = camera_ray(cam, x + 0.5, y + 0.5, W, H);
      const SurfaceHit h = tracer.closest(r, true, true);
      if (h.kind == Surface::none) continue;
      const Vec3 n = dot(h.normal, r.dir) < 0.0 ? h.normal : -h.normal;
      s.depth(y, x) = static_cast<float>(h.t);
      s.normals(y, x, 0) = static_cast<float>(n.x);
      s.normals(y, x, 1) = static_cast<float>(n.y);
      s.normals(y, x, 2) = static_cast<float>(n.z);
      std::uint16_t id = kInstanceBackground;
      switch (h.kind) {
        case Surface::floor:
          id = kInstanceFloor;
          break;
        case Surface::object:
          id = kInstanceObject;
          break;
        case Surface::mirror: {
          s.mirror_mask(y, x) = 1;
          const Ray refl{r.at(h.t) + n * 1e-7, reflect_direction(r.dir, n)};
          const SurfaceHit h2 = tracer.closest(refl, opt.object_in_reflections, false);
          id = h2.kind == Surface::object  ? kInstanceObjectReflection
               : h2.kind == Surface::floor ? kInstanceFloorReflection
                                           : kInstanceMirror;
          break;
        }
        case Surface::none:
          break;
      }
      s.instances(y, x) = id;
    }
  }

  const std::uint64_t seed = mix_seed(spec.seed, static_cast<std::uint64_t>(camera_index));
  s.rgb = shade(spec, cam, opt, seed);
  if (opt.with_empty_mirror) {
    RenderOptions ref = opt;
    ref.object_in_reflections = false;
    s.empty_mirror = shade(spec, cam, ref, seed);
  }
  s.meta = sample_meta(spec, camera_index, opt);
  return s;
}

/// The mirrored scene: object reflected through the mirror plane, mirror
/// removed. Its direct object render is the oracle for the reflection pass.
inline SceneSpec virtual_image_scene(const SceneSpec& s) {
  SceneSpec v = mirrored_virtual_scene(s);
  v.scene_id = s.scene_id + "_virtual";
  return v;
}

inline RenderOptions without_mirror(RenderOptions opt) {
  opt.mirror = false;
  opt.with_empty_mirror = false;
  return opt;
}

}  // namespace mf
