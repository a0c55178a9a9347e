#pragma once

// Whole-dataset steps shared by the command-line tool and the acceptance
// runner: forging scene files, rendering them and inpainting every sample.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mirrorfusion/inpaint.hpp"
#include "mirrorfusion/io/dataset.hpp"
#include "mirrorfusion/render/renderer.hpp"
#include "mirrorfusion/scene/scene_forge.hpp"

namespace mf {

struct ForgeOutput {
  std::vector<SceneSpec> scenes;
  /// Every drawn object, spurious ones included and flagged.
  Catalog catalog;
  std::map<std::string, MaterialGraph> materials;
};

/// Draws objects until `n_scenes` non-spurious ones are found and composes one
/// scene around each. Scene ids are zero-padded indices.
inline ForgeOutput forge_scenes(int n_scenes, std::uint64_t seed, const ForgeConfig& cfg = {},
                                double spurious_rate = 0.05) {
  if (n_scenes < 0) throw InvalidArgument("forge_scenes: negative scene count");
  if (!(spurious_rate >= 0.0 && spurious_rate < 1.0)) {
    throw InvalidArgument("forge_scenes: spurious_rate must lie in [0,1)");
  }
  ForgeOutput out;
  std::mt19937_64 rng(seed);
  for (int drawn = 0; static_cast<int>(out.scenes.size()) < n_scenes; ++drawn) {
    char id[32];
    std::snprintf(id, sizeof id, "obj_%05d", drawn);
    const std::string category = sample_category(rng);
    const std::uint64_t object_seed = rng(), scene_seed = rng(), material_seed = rng();
    MaterialGraph graph = make_material_graph(material_seed, spurious_rate);
    const bool spurious = is_spurious(graph);
    out.catalog.entries.push_back({id, category, "procedural", spurious});
    out.materials.emplace(id, std::move(graph));
    if (spurious) continue;
    char scene_id[16];
    std::snprintf(scene_id, sizeof scene_id, "%04zu", out.scenes.size());
    out.scenes.push_back(compose_scene(make_object(category, id, object_seed), scene_seed, cfg, scene_id));
  }
  return out;
}

inline void write_catalog(const std::filesystem::path& path, const Catalog& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string() + ": cannot open for writing");
  for (const auto& e : c.entries) os << nlohmann::json(e).dump() << "\n";
  if (!os) throw IoError(path.string() + ": write failed");
}

/// One JSON object per non-empty line.
inline Catalog read_catalog(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string() + ": cannot open catalog");
  Catalog c;
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      c.entries.push_back(nlohmann::json::parse(line).get<CatalogEntry>());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline std::map<std::string, MaterialGraph> read_materials(const std::filesystem::path& path) {
  const auto j = io::read_json(path);
  try {
    return j.get<std::map<std::string, MaterialGraph>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": not a material-graph map: " + e.what());
  }
}

/// scene_<id>.json per scene plus catalog.jsonl and materials.json.
inline void write_forge_output(const std::filesystem::path& dir, const ForgeOutput& f) {
  std::filesystem::create_directories(dir);
  for (const auto& s : f.scenes) io::write_scene(dir, s);
  write_catalog(dir / "catalog.jsonl", f.catalog);
  io::write_json(dir / "materials.json", f.materials);
}

/// Renders every camera of every scene file into <out>/<scene_id>/cam_<k>.
/// Returns the number of samples written.
inline std::size_t render_dataset(const std::filesystem::path& scenes_dir, const std::filesystem::path& out_dir,
                                  const RenderOptions& opt = {}) {
  if (!std::filesystem::is_directory(scenes_dir)) {
    throw IoError(scenes_dir.string() + ": scene directory does not exist");
  }
  std::size_t n = 0;
  for (const auto& file : io::list_scene_files(scenes_dir)) {
    const SceneSpec spec = io::read_scene(file);
    for (int k = 0; k < static_cast<int>(spec.cameras.size()); ++k) {
      RenderSample s;
      try {
        s = render(spec, k, opt);
      } catch (const Error& e) {
        throw InvalidArgument(file.string() + ": " + e.what());
      }
      io::write_sample(out_dir / spec.scene_id / io::camera_dir_name(k), s);
      ++n;
    }
  }
  return n;
}

inline std::filesystem::path candidate_file(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / ("gen_" + std::to_string(seed) + ".png");
}

/// Inpaints one sample directory and writes gen_<seed>.png into `out_dir`.
template <typename T>
void inpaint_sample_dir(DualBranchModel<T>& model, const std::filesystem::path& sample_dir,
                        const std::filesystem::path& out_dir, const InpaintOptions& opt,
                        const std::string& prompt_override = "") {
  const RenderSample s = io::read_sample(sample_dir);
  const std::string prompt = prompt_override.empty() ? s.meta.value("prompt", std::string()) : prompt_override;
  std::vector<PixelImage> gens;
  try {
    gens = inpaint(model, s.rgb, s.mirror_mask, s.depth, prompt, opt);
  } catch (const Error& e) {
    throw InvalidArgument(sample_dir.string() + ": " + e.what());
  }
  std::filesystem::create_directories(out_dir);
  for (std::size_t i = 0; i < gens.size(); ++i) io::write_png_rgb(candidate_file(out_dir, opt.seeds[i]), gens[i]);
}

/// Inpaints every dataset sample into <out>/<scene>/cam_<k>/gen_<seed>.png.
template <typename T>
std::size_t inpaint_dataset(DualBranchModel<T>& model, const std::filesystem::path& dataset_dir,
                            const std::filesystem::path& out_dir, const InpaintOptions& opt = {}) {
  const auto samples = io::list_samples(dataset_dir);
  for (const auto& dir : samples) inpaint_sample_dir(model, dir, out_dir / io::sample_key(dir), opt);
  return samples.size();
}

}  // namespace mf
