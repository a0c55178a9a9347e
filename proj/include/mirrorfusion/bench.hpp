#pragma once

// Benchmark split construction and the evaluation protocol over a rendered
// dataset and a directory of generated candidates.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mirrorfusion/io/dataset.hpp"
#include "mirrorfusion/metrics.hpp"
#include "mirrorfusion/scene/scene_forge.hpp"

namespace mf {

struct BenchSplit {
  std::vector<std::string> known_ids;
  std::vector<std::string> unknown_ids;
  std::vector<std::string> unknown_categories;
  std::uint64_t seed = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BenchSplit, known_ids, unknown_ids, unknown_categories, seed)

/// Categories are ranked by ascending object count (ties by name) and taken
/// whole until at least `n_unknown` objects are held out. The seed is recorded
/// only; the rule itself is deterministic.
inline BenchSplit build_split(const Catalog& catalog, std::size_t n_unknown, std::uint64_t seed) {
  if (catalog.entries.empty()) throw InvalidArgument("build_split: empty catalog");
  catalog.validate();
  if (n_unknown >= catalog.entries.size()) {
    throw InvalidArgument("build_split: cannot hold out " + std::to_string(n_unknown) + " of " +
                          std::to_string(catalog.entries.size()) + " objects");
  }
  std::map<std::string, std::size_t> freq;
  for (const auto& e : catalog.entries) ++freq[e.category];
  std::vector<std::pair<std::size_t, std::string>> ranked;
  for (const auto& [cat, n] : freq) ranked.emplace_back(n, cat);
  std::sort(ranked.begin(), ranked.end());

  std::set<std::string> unknown;
  std::size_t held = 0;
  for (const auto& [n, cat] : ranked) {
    if (held >= n_unknown) break;
    unknown.insert(cat);
    held += n;
  }
  if (unknown.size() == freq.size()) {
    throw InvalidArgument("build_split: holding out " + std::to_string(n_unknown) +
                          " objects leaves no known category");
  }
  BenchSplit s;
  s.seed = seed;
  s.unknown_categories.assign(unknown.begin(), unknown.end());
  for (const auto& e : catalog.entries) {
    (unknown.contains(e.category) ? s.unknown_ids : s.known_ids).push_back(e.object_id);
  }
  std::sort(s.known_ids.begin(), s.known_ids.end());
  std::sort(s.unknown_ids.begin(), s.unknown_ids.end());
  return s;
}

struct SampleMetrics {
  std::string id;
  std::string object_id;
  std::string category;
  std::string group;
  int selected = 0;
  std::vector<double> candidate_ssim_masked;
  double psnr_unmasked = 0, ssim_unmasked = 0, lpips_unmasked = 0;
  double psnr_masked = 0, ssim_masked = 0, lpips_masked = 0;
  double iou_reflection = 0;
  double baseline_ssim_masked = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SampleMetrics, id, object_id, category, group, selected, candidate_ssim_masked,
                                   psnr_unmasked, ssim_unmasked, lpips_unmasked, psnr_masked, ssim_masked,
                                   lpips_masked, iou_reflection, baseline_ssim_masked)

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"psnr_unmasked", "ssim_unmasked",  "lpips_unmasked",
                                              "psnr_masked",   "ssim_masked",    "lpips_masked",
                                              "iou_reflection", "baseline_ssim_masked"};
  return names;
}

struct MetricsReport {
  std::vector<SampleMetrics> per_sample;
  nlohmann::json aggregates;
  nlohmann::json split;

  nlohmann::json to_json() const {
    return {{"per_sample", per_sample}, {"aggregates", aggregates}, {"split", split}, {"clip_similarity", "n/a"}};
  }
};

/// Means of every metric over `rows`, plus the count and the share of
/// samples whose masked SSIM beats the mid-gray baseline.
inline nlohmann::json aggregate(const std::vector<const SampleMetrics*>& rows) {
  nlohmann::json out{{"count", rows.size()}};
  if (rows.empty()) return out;
  for (const auto& name : metric_names()) {
    double sum = 0.0;
    for (const auto* r : rows) sum += nlohmann::json(*r).at(name).get<double>();
    out[name] = sum / static_cast<double>(rows.size());
  }
  std::size_t beats = 0;
  for (const auto* r : rows) beats += r->ssim_masked > r->baseline_ssim_masked;
  out["beats_baseline_fraction"] = static_cast<double>(beats) / static_cast<double>(rows.size());
  return out;
}

inline void finalize_report(MetricsReport& report) {
  std::vector<const SampleMetrics*> all, known, unknown;
  for (const auto& r : report.per_sample) {
    all.push_back(&r);
    if (r.group == "known") known.push_back(&r);
    if (r.group == "unknown") unknown.push_back(&r);
  }
  report.aggregates = {{"all", aggregate(all)}, {"known", aggregate(known)}, {"unknown", aggregate(unknown)}};
}

struct EvalOptions {
  double segmentation_threshold = 0.1;
  float baseline_fill = 0.5f;
};

/// Scores one sample: candidates are ranked by masked SSIM and the best one
/// is measured in the unmasked region, the mirror region and by the IoU of
/// the segmented reflections.
inline SampleMetrics score_sample(const RenderSample& gt, const std::vector<PixelImage>& candidates,
                                  const EvalOptions& opt = {}) {
  if (gt.empty_mirror.empty()) throw InvalidArgument("score_sample: ground truth lacks an empty-mirror reference");
  SampleMetrics m;
  const MirrorMask& mask = gt.mirror_mask;
  const MirrorMask outside = invert(mask);
  for (const auto& c : candidates) {
    if (!c.same_shape(gt.rgb)) throw ShapeError("score_sample: candidate " + c.shape_string() + " vs ground truth");
  }
  m.selected = static_cast<int>(select_representative(candidates, gt.rgb, mask, &m.candidate_ssim_masked));
  const PixelImage& best = candidates[static_cast<std::size_t>(m.selected)];
  m.psnr_unmasked = psnr(best, gt.rgb, outside);
  m.ssim_unmasked = ssim(best, gt.rgb, outside);
  m.lpips_unmasked = perceptual_distance(best, gt.rgb, outside);
  m.psnr_masked = psnr(best, gt.rgb, mask);
  m.ssim_masked = m.candidate_ssim_masked[static_cast<std::size_t>(m.selected)];
  m.lpips_masked = perceptual_distance(best, gt.rgb, mask);
  const MirrorMask seg_gt = segment_reflection(gt.rgb, gt.empty_mirror, mask, opt.segmentation_threshold);
  const MirrorMask seg_gen = segment_reflection(best, gt.empty_mirror, mask, opt.segmentation_threshold);
  m.iou_reflection = reflection_iou(seg_gt, seg_gen);
  m.baseline_ssim_masked = ssim(mask_out(gt.rgb, mask, opt.baseline_fill), gt.rgb, mask);
  return m;
}

/// gen_<seed>.png files in a directory, ordered by seed.
inline std::vector<std::filesystem::path> list_candidates(const std::filesystem::path& dir) {
  std::vector<std::pair<long long, std::filesystem::path>> found;
  if (std::filesystem::is_directory(dir)) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const std::string n = e.path().filename().string();
      if (!e.is_regular_file() || !n.starts_with("gen_") || !n.ends_with(".png")) continue;
      try {
        found.emplace_back(std::stoll(n.substr(4, n.size() - 8)), e.path());
      } catch (const std::exception&) {
        throw IoError(e.path().string() + ": candidate name must be gen_<seed>.png");
      }
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<std::filesystem::path> out;
  for (auto& f : found) out.push_back(std::move(f.second));
  return out;
}

/// Evaluates every dataset sample against <generated_dir>/<scene>/cam_<k>/gen_<seed>.png.
inline MetricsReport evaluate(const std::filesystem::path& dataset_dir, const std::filesystem::path& generated_dir,
                              const std::optional<BenchSplit>& split = std::nullopt,
                              const EvalOptions& opt = {}) {
  namespace fs = std::filesystem;
  const auto samples = io::list_samples(dataset_dir);
  if (samples.empty()) throw IoError(dataset_dir.string() + ": dataset contains no samples");
  if (!fs::is_directory(generated_dir)) throw IoError(generated_dir.string() + ": generated directory does not exist");

  std::set<std::string> dataset_keys;
  std::vector<std::string> missing;
  for (const auto& s : samples) {
    dataset_keys.insert(io::sample_key(s));
    if (list_candidates(generated_dir / io::sample_key(s)).empty()) missing.push_back(io::sample_key(s));
  }
  std::vector<std::string> orphans;
  for (const auto& scene : fs::directory_iterator(generated_dir)) {
    if (!scene.is_directory()) continue;
    for (const auto& cam : fs::directory_iterator(scene.path())) {
      if (!cam.is_directory() || list_candidates(cam.path()).empty()) continue;
      const std::string key = io::sample_key(cam.path());
      if (!dataset_keys.contains(key)) orphans.push_back(key);
    }
  }
  if (!missing.empty() || !orphans.empty()) {
    std::sort(orphans.begin(), orphans.end());
    std::string msg = "evaluate: unpaired samples;";
    for (const auto& k : missing) msg += " missing generation for " + k + ";";
    for (const auto& k : orphans) msg += " no ground truth for " + k + ";";
    throw InvalidArgument(msg);
  }

  std::set<std::string> known, unknown;
  if (split) {
    known.insert(split->known_ids.begin(), split->known_ids.end());
    unknown.insert(split->unknown_ids.begin(), split->unknown_ids.end());
  }
  MetricsReport report;
  for (const auto& dir : samples) {
    const std::string key = io::sample_key(dir);
    const RenderSample gt = io::read_sample(dir);
    std::vector<PixelImage> cands;
    for (const auto& p : list_candidates(generated_dir / key)) cands.push_back(io::read_png_rgb(p));
    SampleMetrics m;
    try {
      m = score_sample(gt, cands, opt);
    } catch (const Error& e) {
      throw InvalidArgument(key + ": " + e.what());
    }
    m.id = key;
    m.object_id = gt.meta.value("object_id", std::string());
    m.category = gt.meta.value("object_category", std::string());
    m.group = unknown.contains(m.object_id) ? "unknown" : known.contains(m.object_id) ? "known" : "unassigned";
    report.per_sample.push_back(std::move(m));
  }
  report.split = split ? nlohmann::json(*split) : nlohmann::json(nullptr);
  finalize_report(report);
  return report;
}

}  // namespace mf
