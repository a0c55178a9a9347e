#pragma once

// Region-restricted image metrics: PSNR, windowed SSIM, a random-feature
// perceptual distance, mask IoU and reference-difference reflection
// segmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mirrorfusion/depth_conditioning.hpp"
#include "mirrorfusion/raster.hpp"

namespace mf {

inline constexpr double kPsnrCap = 100.0;

namespace metrics_detail {

inline void require_pair(const PixelImage& a, const PixelImage& b, const MirrorMask& region, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": images " + a.shape_string() + " and " + b.shape_string() + " differ");
  }
  if (region.height() != a.height() || region.width() != a.width() || region.channels() != 1) {
    throw ShapeError(std::string(what) + ": region " + region.shape_string() + " does not match image " +
                     a.shape_string());
  }
}

}  // namespace metrics_detail

/// Complement of a binary mask.
inline MirrorMask invert(const MirrorMask& m) {
  MirrorMask out(m.height(), m.width(), 1);
  for (std::size_t i = 0; i < m.size(); ++i) out.values()[i] = m.values()[i] != 0 ? 0 : 1;
  return out;
}

namespace metrics_detail {

/// Both images with every pixel outside `region` set to mid-gray, so that
/// windowed statistics never see content from outside the region.
inline std::pair<PixelImage, PixelImage> restrict_pair(const PixelImage& a, const PixelImage& b,
                                                       const MirrorMask& region) {
  const MirrorMask outside = invert(region);
  return {mask_out(a, outside, 0.5f), mask_out(b, outside, 0.5f)};
}

}  // namespace metrics_detail

/// PSNR over the pixels where `region` is set, images in [0,1]; capped at 100 dB.
inline double psnr(const PixelImage& a, const PixelImage& b, const MirrorMask& region) {
  metrics_detail::require_pair(a, b, region, "psnr");
  const int C = a.channels();
  double acc = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      if (!region(y, x)) continue;
      for (int c = 0; c < C; ++c) {
        const double d = static_cast<double>(a(y, x, c)) - b(y, x, c);
        acc += d * d;
      }
      n += static_cast<std::size_t>(C);
    }
  }
  if (n == 0) throw InvalidArgument("psnr: empty region");
  const double mse = acc / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
  /// A window counts when at least this fraction of its pixels is in the region.
  double min_inside = 0.5;
};

/// Mean SSIM over valid (fully in-image) Gaussian windows, averaged over
/// channels, keeping windows with enough pixels inside `region`. Pixels
/// outside the region are mid-gray in both images.
inline double ssim(const PixelImage& a_in, const PixelImage& b_in, const MirrorMask& region,
                   const SsimOptions& o = {}) {
  metrics_detail::require_pair(a_in, b_in, region, "ssim");
  const auto [a, b] = metrics_detail::restrict_pair(a_in, b_in, region);
  const int k = o.window, H = a.height(), W = a.width(), C = a.channels();
  if (H < k || W < k) throw InvalidArgument("ssim: image smaller than one window");
  std::vector<double> g(static_cast<std::size_t>(k) * k);
  double gsum = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double dy = i - (k - 1) / 2.0, dx = j - (k - 1) / 2.0;
      g[static_cast<std::size_t>(i) * k + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * o.sigma * o.sigma));
      gsum += g[static_cast<std::size_t>(i) * k + j];
    }
  }
  for (double& v : g) v /= gsum;
  const double c1 = std::pow(o.k1 * o.data_range, 2), c2 = std::pow(o.k2 * o.data_range, 2);

  double total = 0.0;
  std::size_t windows = 0;
  for (int y0 = 0; y0 + k <= H; ++y0) {
    for (int x0 = 0; x0 + k <= W; ++x0) {
      int inside = 0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) inside += region(y0 + i, x0 + j) != 0;
      }
      if (inside < o.min_inside * k * k) continue;
      double s = 0.0;
      for (int c = 0; c < C; ++c) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < k; ++i) {
          for (int j = 0; j < k; ++j) {
            const double w = g[static_cast<std::size_t>(i) * k + j];
            const double va = a(y0 + i, x0 + j, c), vb = b(y0 + i, x0 + j, c);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        s += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
      total += s / C;
      ++windows;
    }
  }
  if (windows == 0) throw InvalidArgument("ssim: region smaller than one window");
  return total / static_cast<double>(windows);
}

/// Distance between two images restricted to a region.
using PerceptualBackend = std::function<double(const PixelImage&, const PixelImage&, const MirrorMask&)>;

/// LPIPS stand-in: a fixed random 3x3 convolution bank applied at three
/// scales, ReLU, features normalized to unit length per pixel; the distance
/// is the mean squared feature difference over region pixels, averaged over
/// scales. As with SSIM, pixels outside the region are mid-gray.
class RandomFeatureDistance {
 public:
  explicit RandomFeatureDistance(std::uint64_t seed = 0x1f5e5eedULL, int features = 12, int scales = 3)
      : features_(features), scales_(scales) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int s = 0; s < scales_; ++s) {
      Bank bank;
      bank.w.resize(static_cast<std::size_t>(features_) * 27);
      for (double& v : bank.w) v = n01(rng) / std::sqrt(27.0);
      bank.b.resize(static_cast<std::size_t>(features_));
      for (double& v : bank.b) v = 0.1 * n01(rng);
      banks_.push_back(std::move(bank));
    }
  }

  double operator()(const PixelImage& a_in, const PixelImage& b_in, const MirrorMask& region) const {
    metrics_detail::require_pair(a_in, b_in, region, "perceptual_distance");
    if (a_in.channels() != 3) throw ShapeError("perceptual_distance: RGB images required");
    const auto [a, b] = metrics_detail::restrict_pair(a_in, b_in, region);
    Raster<double> ia = to_signed(a), ib = to_signed(b);
    Raster<double> reg(region.height(), region.width(), 1);
    for (std::size_t i = 0; i < region.size(); ++i) reg.values()[i] = region.values()[i] != 0 ? 1.0 : 0.0;
    double total = 0.0;
    int used = 0;
    for (int s = 0; s < scales_; ++s) {
      if (s > 0) {
        if (ia.height() < 2 || ia.width() < 2) break;
        ia = pool2(ia);
        ib = pool2(ib);
        reg = pool2(reg);
      }
      const auto fa = features(ia, banks_[s]), fb = features(ib, banks_[s]);
      double acc = 0.0, wsum = 0.0;
      for (int y = 0; y < ia.height(); ++y) {
        for (int x = 0; x < ia.width(); ++x) {
          const double w = reg(y, x) >= 0.5 ? 1.0 : 0.0;
          if (w == 0.0) continue;
          double d = 0.0;
          for (int f = 0; f < features_; ++f) {
            const double e = fa(y, x, f) - fb(y, x, f);
            d += e * e;
          }
          acc += d;
          wsum += 1.0;
        }
      }
      if (wsum > 0.0) {
        total += acc / wsum;
        ++used;
      }
    }
    if (used == 0) throw InvalidArgument("perceptual_distance: empty region");
    return total / used;
  }

 private:
  struct Bank {
    std::vector<double> w;  // [feature][ky][kx][channel]
    std::vector<double> b;
  };

  static Raster<double> to_signed(const PixelImage& img) {
    Raster<double> r(img.height(), img.width(), img.channels());
    for (std::size_t i = 0; i < img.size(); ++i) r.values()[i] = 2.0 * img.values()[i] - 1.0;
    return r;
  }

  static Raster<double> pool2(const Raster<double>& r) {
    Raster<double> out(r.height() / 2, r.width() / 2, r.channels());
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        for (int c = 0; c < r.channels(); ++c) {
          out(y, x, c) = 0.25 * (r(2 * y, 2 * x, c) + r(2 * y + 1, 2 * x, c) + r(2 * y, 2 * x + 1, c) +
                                 r(2 * y + 1, 2 * x + 1, c));
        }
      }
    }
    return out;
  }

  Raster<double> features(const Raster<double>& img, const Bank& bank) const {
    const int H = img.height(), W = img.width();
    Raster<double> out(H, W, features_);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double norm2 = 0.0;
        for (int f = 0; f < features_; ++f) {
          double v = bank.b[static_cast<std::size_t>(f)];
          for (int ky = 0; ky < 3; ++ky) {
            const int yy = y + ky - 1;
            if (yy < 0 || yy >= H) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int xx = x + kx - 1;
              if (xx < 0 || xx >= W) continue;
              for (int c = 0; c < 3; ++c) {
                v += bank.w[((static_cast<std::size_t>(f) * 3 + ky) * 3 + kx) * 3 + c] * img(yy, xx, c);
              }
            }
          }
          v = std::max(v, 0.0);
          out(y, x, f) = v;
          norm2 += v * v;
        }
        const double inv = 1.0 / (std::sqrt(norm2) + 1e-10);
        for (int f = 0; f < features_; ++f) out(y, x, f) *= inv;
      }
    }
    return out;
  }

  int features_;
  int scales_;
  std::vector<Bank> banks_;
};

inline double perceptual_distance(const PixelImage& a, const PixelImage& b, const MirrorMask& region) {
  static const RandomFeatureDistance backend;
  return backend(a, b, region);
}

/// |A and B| / |A or B|; two empty masks score 1.
inline double reflection_iou(const MirrorMask& gt, const MirrorMask& pred) {
  if (!gt.same_shape(pred)) throw ShapeError("reflection_iou: " + gt.shape_string() + " vs " + pred.shape_string());
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto a = gt.values()[i], b = pred.values()[i];
    if (a > 1 || b > 1) throw InvalidArgument("reflection_iou: masks must be binary (0/1)");
    inter += (a & b);
    uni += (a | b);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace metrics_detail {

/// 3x3 erosion (`erode`) or dilation; pixels outside the image are ignored.
inline MirrorMask morph3(const MirrorMask& m, bool erode) {
  MirrorMask out(m.height(), m.width(), 1);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      bool v = erode;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= m.height() || xx < 0 || xx >= m.width()) continue;
          if (erode) {
            v = v && m(yy, xx) != 0;
          } else {
            v = v || m(yy, xx) != 0;
          }
        }
      }
      out(y, x) = v ? 1 : 0;
    }
  }
  return out;
}

}  // namespace metrics_detail

/// Pixels inside the mirror whose largest per-channel deviation from the
/// empty-mirror reference exceeds `threshold`, cleaned by a 3x3 opening then
/// closing.
inline MirrorMask segment_reflection(const PixelImage& generated, const PixelImage& reference,
                                     const MirrorMask& mirror_mask, double threshold) {
  metrics_detail::require_pair(generated, reference, mirror_mask, "segment_reflection");
  MirrorMask m(mirror_mask.height(), mirror_mask.width(), 1);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!mirror_mask(y, x)) continue;
      double dev = 0.0;
      for (int c = 0; c < generated.channels(); ++c) {
        dev = std::max(dev, std::abs(static_cast<double>(generated(y, x, c)) - reference(y, x, c)));
      }
      m(y, x) = dev > threshold ? 1 : 0;
    }
  }
  using metrics_detail::morph3;
  m = morph3(morph3(m, true), false);
  m = morph3(morph3(m, false), true);
  for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] &= mirror_mask.values()[i] != 0 ? 1 : 0;
  return m;
}

/// Index of the candidate with the highest SSIM against `gt` inside the
/// mirror; the lowest index wins ties.
inline std::size_t select_representative(const std::vector<PixelImage>& candidates, const PixelImage& gt,
                                         const MirrorMask& mirror_mask, std::vector<double>* scores = nullptr) {
  if (candidates.empty()) throw InvalidArgument("select_representative: no candidates");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  if (scores != nullptr) scores->clear();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = ssim(candidates[i], gt, mirror_mask);
    if (scores != nullptr) scores->push_back(s);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

/// Text-image alignment scorer; no backend ships by default.
using TextAlignmentScorer = std::function<double(const PixelImage&, const std::string&)>;

}  // namespace mf
