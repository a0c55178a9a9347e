#pragma once

// On-disk dataset layout:
//   <root>/<scene_id>/cam_<k>/{rgb.png, depth.pfm, normal.pfm, instance.png,
//                              mirror_mask.png, empty_mirror.png, meta.json}
// and scene descriptions as scene_<id>.json.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mirrorfusion/io/image_io.hpp"
#include "mirrorfusion/render/renderer.hpp"

namespace mf::io {

namespace fs = std::filesystem;

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string() + ": cannot open");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
}

/// Pretty-printed with a trailing newline; byte-stable for equal input.
inline void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string() + ": cannot open for writing");
  os << j.dump(2) << "\n";
  if (!os) throw IoError(path.string() + ": write failed");
}

inline fs::path scene_file(const fs::path& dir, const std::string& scene_id) {
  return dir / ("scene_" + scene_id + ".json");
}

inline void write_scene(const fs::path& dir, const SceneSpec& spec) { write_json(scene_file(dir, spec.scene_id), spec); }

inline SceneSpec read_scene(const fs::path& path) {
  const auto j = read_json(path);
  try {
    return j.get<SceneSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": not a scene description: " + e.what());
  }
}

/// scene_*.json files in `dir`, sorted by name.
inline std::vector<fs::path> list_scene_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with("scene_") && name.ends_with(".json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string camera_dir_name(int k) { return "cam_" + std::to_string(k); }

inline void write_sample(const fs::path& dir, const RenderSample& s) {
  fs::create_directories(dir);
  write_png_rgb(dir / "rgb.png", s.rgb);
  write_pfm(dir / "depth.pfm", s.depth);
  write_pfm(dir / "normal.pfm", s.normals);
  write_png_u16(dir / "instance.png", s.instances);
  write_png_mask(dir / "mirror_mask.png", s.mirror_mask);
  if (!s.empty_mirror.empty()) write_png_rgb(dir / "empty_mirror.png", s.empty_mirror);
  write_json(dir / "meta.json", s.meta);
}

inline void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw IoError(p.string() + ": missing sample file");
}

inline RenderSample read_sample(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": sample directory does not exist");
  for (const char* f : {"rgb.png", "depth.pfm", "normal.pfm", "instance.png", "mirror_mask.png", "meta.json"}) {
    require_file(dir / f);
  }
  RenderSample s;
  s.rgb = read_png_rgb(dir / "rgb.png");
  s.depth = read_pfm(dir / "depth.pfm");
  s.normals = read_pfm(dir / "normal.pfm");
  s.instances = read_png_u16(dir / "instance.png");
  s.mirror_mask = read_png_mask(dir / "mirror_mask.png");
  if (fs::is_regular_file(dir / "empty_mirror.png")) s.empty_mirror = read_png_rgb(dir / "empty_mirror.png");
  s.meta = read_json(dir / "meta.json");
  const int H = s.rgb.height(), W = s.rgb.width();
  auto same = [&](int h, int w) { return h == H && w == W; };
  if (!same(s.depth.height(), s.depth.width()) || s.depth.channels() != 1 ||
      !same(s.normals.height(), s.normals.width()) || s.normals.channels() != 3 ||
      !same(s.instances.height(), s.instances.width()) || !same(s.mirror_mask.height(), s.mirror_mask.width()) ||
      (!s.empty_mirror.empty() && !s.empty_mirror.same_shape(s.rgb))) {
    throw IoError(dir.string() + ": sample rasters disagree in size");
  }
  return s;
}

/// Sample directories (<root>/<scene>/cam_<k>) containing a meta.json, sorted.
inline std::vector<fs::path> list_samples(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError(root.string() + ": dataset directory does not exist");
  std::vector<fs::path> out;
  for (const auto& scene : fs::directory_iterator(root)) {
    if (!scene.is_directory()) continue;
    for (const auto& cam : fs::directory_iterator(scene.path())) {
      if (cam.is_directory() && fs::is_regular_file(cam.path() / "meta.json")) out.push_back(cam.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// "<scene_id>/cam_<k>" for a sample directory.
inline std::string sample_key(const fs::path& sample_dir) {
  return sample_dir.parent_path().filename().string() + "/" + sample_dir.filename().string();
}

}  // namespace mf::io
