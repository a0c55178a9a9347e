#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mirrorfusion/error.hpp"

namespace mf {

/// Dense row-major H x W x C raster (channels interleaved).
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int height, int width, int channels, T fill = T(0))
      : h_(height), w_(width), c_(channels) {
    if (height < 0 || width < 0 || channels < 0) {
      throw ShapeError("Raster: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int y, int x, int ch = 0) { return data_[index(y, x, ch)]; }
  const T& operator()(int y, int x, int ch = 0) const { return data_[index(y, x, ch)]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool same_shape(const Raster& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

  std::string shape_string() const {
    return "(" + std::to_string(h_) + "," + std::to_string(w_) + "," + std::to_string(c_) + ")";
  }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  std::size_t index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * w_ + x) * c_ + ch;
  }

  int h_ = 0;
  int w_ = 0;
  int c_ = 0;
  std::vector<T> data_;
};

/// RGB image in [0,1].
using PixelImage = Raster<float>;
/// Latent raster (H/f) x (W/f) x (3 f^2).
using LatentTensor = Raster<float>;
/// Single-channel float map (depth, masks before binarization).
using FloatMap = Raster<float>;

template <typename U, typename T>
Raster<U> raster_cast(const Raster<T>& src) {
  Raster<U> out(src.height(), src.width(), src.channels());
  std::transform(src.values().begin(), src.values().end(), out.values().begin(),
                 [](T v) { return static_cast<U>(v); });
  return out;
}

template <typename T>
void require_same_shape(const Raster<T>& a, const Raster<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

template <typename T>
bool all_finite(const Raster<T>& r) {
  return std::all_of(r.values().begin(), r.values().end(),
                     [](T v) { return std::isfinite(static_cast<double>(v)); });
}

template <typename T>
double max_abs_diff(const Raster<T>& a, const Raster<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i])));
  }
  return m;
}

}  // namespace mf
