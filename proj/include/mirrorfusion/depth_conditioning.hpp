#pragma once

// Depth normalization relative to the mirror, resizing of mask/depth rasters
// to latent resolution and assembly of the conditioning-branch inputs.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "mirrorfusion/latent_codec.hpp"
#include "mirrorfusion/raster.hpp"

namespace mf {

/// Binary mirror mask: 1 = mirror (region to inpaint), 0 = keep.
using MirrorMask = Raster<std::uint8_t>;
/// First-hit distance per pixel, single channel.
using DepthMap = Raster<float>;

inline constexpr double kDefaultDepthDelta = 0.5;

struct NormalizedDepth {
  Raster<double> data;  // values in [-1,1]
  double d_max = 0.0;
  double delta = kDefaultDepthDelta;
};

inline std::size_t mask_count(const MirrorMask& m) {
  std::size_t n = 0;
  for (auto v : m.values()) n += v != 0 ? 1 : 0;
  return n;
}

/// d_hat = (clip(d, 0, d_max + delta) / (d_max + delta) - 0.5) * 2, with d_max
/// the largest finite depth under the mask. +inf depths (no hit) clip to +1;
/// NaN or negative depths are rejected.
inline NormalizedDepth normalize_depth(const DepthMap& d, const MirrorMask& m,
                                       double delta = kDefaultDepthDelta) {
  if (d.channels() != 1 || m.channels() != 1 || d.height() != m.height() || d.width() != m.width()) {
    throw ShapeError("normalize_depth: depth " + d.shape_string() + " and mask " + m.shape_string() +
                     " must be single-channel rasters of equal size");
  }
  if (!(delta > 0.0)) throw InvalidArgument("normalize_depth: delta must be positive");
  double d_max = -1.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double v = d.values()[i];
    if (std::isnan(v) || v < 0.0) {
      throw InvalidArgument("normalize_depth: invalid depth value " + std::to_string(v) + " at index " +
                            std::to_string(i));
    }
    if (m.values()[i] != 0 && std::isfinite(v)) d_max = std::max(d_max, v);
  }
  if (mask_count(m) == 0) throw EmptyMaskError("normalize_depth: mirror mask is empty");
  if (d_max < 0.0) throw InvalidArgument("normalize_depth: no finite depth under the mirror mask");

  NormalizedDepth out;
  out.d_max = d_max;
  out.delta = delta;
  out.data = Raster<double>(d.height(), d.width(), 1);
  const double hi = d_max + delta;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double clipped = std::clamp(static_cast<double>(d.values()[i]), 0.0, hi);
    out.data.values()[i] = (clipped / hi - 0.5) * 2.0;
  }
  return out;
}

enum class ResizeMode { area_mean, nearest };

/// Integer-factor downsampling. `area_mean` averages each source block;
/// `nearest` takes the block's centre sample (lower-right of centre for even
/// blocks).
template <typename T>
Raster<float> resize_to_latent(const Raster<T>& src, int target_h, int target_w,
                               ResizeMode mode = ResizeMode::area_mean) {
  if (target_h < 1 || target_w < 1 || src.height() % target_h != 0 || src.width() % target_w != 0) {
    throw ShapeError("resize_to_latent: " + src.shape_string() + " not divisible into " +
                     std::to_string(target_h) + "x" + std::to_string(target_w));
  }
  const int fy = src.height() / target_h, fx = src.width() / target_w;
  Raster<float> out(target_h, target_w, src.channels());
  for (int y = 0; y < target_h; ++y) {
    for (int x = 0; x < target_w; ++x) {
      for (int c = 0; c < src.channels(); ++c) {
        if (mode == ResizeMode::nearest) {
          out(y, x, c) = static_cast<float>(src(y * fy + fy / 2, x * fx + fx / 2, c));
          continue;
        }
        double acc = 0.0;
        for (int dy = 0; dy < fy; ++dy) {
          for (int dx = 0; dx < fx; ++dx) acc += static_cast<double>(src(y * fy + dy, x * fx + dx, c));
        }
        out(y, x, c) = static_cast<float>(acc / (fy * fx));
      }
    }
  }
  return out;
}

/// Inputs of the conditioning branch besides the noisy latent.
struct ConditionBundle {
  LatentTensor z_m;  // latent of the masked image
  FloatMap x_m;      // mask at latent resolution, [0,1]
  FloatMap x_d;      // normalized depth at latent resolution, [-1,1]

  int height() const { return z_m.height(); }
  int width() const { return z_m.width(); }
};

struct ConditionOptions {
  int patch_factor = kDefaultPatchFactor;
  ResizeMode mask_mode = ResizeMode::area_mean;
  double depth_delta = kDefaultDepthDelta;
  float masked_fill = 0.5f;
};

/// Image with every masked pixel replaced by `fill`.
inline PixelImage mask_out(const PixelImage& img, const MirrorMask& m, float fill = 0.5f) {
  if (img.height() != m.height() || img.width() != m.width()) {
    throw ShapeError("mask_out: image " + img.shape_string() + " vs mask " + m.shape_string());
  }
  PixelImage out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (m(y, x) == 0) continue;
      for (int c = 0; c < img.channels(); ++c) out(y, x, c) = fill;
    }
  }
  return out;
}

inline ConditionBundle build_condition(const PixelImage& img, const MirrorMask& m, const DepthMap& d,
                                       const ConditionOptions& opt = {}) {
  if (img.height() != d.height() || img.width() != d.width()) {
    throw ShapeError("build_condition: image " + img.shape_string() + " vs depth " + d.shape_string());
  }
  ConditionBundle b;
  b.z_m = encode(mask_out(img, m, opt.masked_fill), opt.patch_factor);
  const int lh = b.z_m.height(), lw = b.z_m.width();
  Raster<float> mf(m.height(), m.width(), 1);
  for (std::size_t i = 0; i < m.size(); ++i) mf.values()[i] = m.values()[i] != 0 ? 1.0f : 0.0f;
  b.x_m = resize_to_latent(mf, lh, lw, opt.mask_mode);
  b.x_d = resize_to_latent(normalize_depth(d, m, opt.depth_delta).data, lh, lw, ResizeMode::area_mean);
  return b;
}

}  // namespace mf
