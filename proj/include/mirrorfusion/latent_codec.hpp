#pragma once

// Exactly invertible pixel <-> latent codec: space-to-depth by a patch factor f
// followed by the affine value map [0,1] -> [-1,1].

#include <algorithm>
#include <string>

#include "mirrorfusion/raster.hpp"

namespace mf {

inline constexpr int kDefaultPatchFactor = 4;

/// Latent channel count for an RGB image and patch factor f.
constexpr int latent_channels(int patch_factor = kDefaultPatchFactor) {
  return 3 * patch_factor * patch_factor;
}

/// Rearranges f x f pixel patches into channels. Channel index inside a latent
/// cell is `(dy * f + dx) * C + ch`.
template <typename T>
Raster<T> space_to_depth(const Raster<T>& img, int f) {
  if (f < 1) throw InvalidArgument("space_to_depth: patch factor must be >= 1");
  if (img.height() % f != 0 || img.width() % f != 0) {
    throw ShapeError("encode: image " + img.shape_string() + " not divisible by patch factor " +
                     std::to_string(f));
  }
  const int c = img.channels();
  Raster<T> out(img.height() / f, img.width() / f, c * f * f);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const int base = ((y % f) * f + (x % f)) * c;
      for (int ch = 0; ch < c; ++ch) out(y / f, x / f, base + ch) = img(y, x, ch);
    }
  }
  return out;
}

template <typename T>
Raster<T> depth_to_space(const Raster<T>& z, int f, int out_channels) {
  if (f < 1 || out_channels < 1 || z.channels() != out_channels * f * f) {
    throw ShapeError("decode: latent " + z.shape_string() + " inconsistent with patch factor " +
                     std::to_string(f));
  }
  Raster<T> out(z.height() * f, z.width() * f, out_channels);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const int base = ((y % f) * f + (x % f)) * out_channels;
      for (int ch = 0; ch < out_channels; ++ch) out(y, x, ch) = z(y / f, x / f, base + ch);
    }
  }
  return out;
}

/// Pixel image (values in [0,1]) to latent (values in [-1,1]).
inline LatentTensor encode(const PixelImage& img, int f = kDefaultPatchFactor) {
  if (img.channels() != 3) throw ShapeError("encode: expected 3-channel image, got " + img.shape_string());
  LatentTensor z = space_to_depth(img, f);
  for (float& v : z.values()) v = 2.0f * v - 1.0f;
  return z;
}

/// Inverse of encode; output clipped to [0,1].
inline PixelImage decode(const LatentTensor& z, int f = kDefaultPatchFactor) {
  PixelImage img = depth_to_space(z, f, 3);
  for (float& v : img.values()) v = std::clamp(0.5f * (v + 1.0f), 0.0f, 1.0f);
  return img;
}

}  // namespace mf
