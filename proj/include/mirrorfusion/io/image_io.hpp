#pragma once

// PNG (8-bit RGB, 8-bit gray, 16-bit gray) and PFM (little-endian float)
// raster I/O.

#include <png.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mirrorfusion/error.hpp"
#include "mirrorfusion/raster.hpp"

namespace mf::io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) {
    throw IoError(path.string() + ": cannot open (" + std::string(std::strerror(errno)) + ")");
  }
  return f;
}

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what != nullptr) *what = msg;
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

inline void write_png_raw(const std::filesystem::path& path, const PngImage& img) {
  FilePtr fp = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (png == nullptr) throw IoError(path.string() + ": png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  const int bytes = img.bit_depth / 8;
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels * bytes);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": PNG write error: " + err);
  }
  png_init_io(png, fp.get());
  const int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (int i = 0; i < img.width * img.channels; ++i) {
      const std::uint16_t v = img.samples[static_cast<std::size_t>(y) * img.width * img.channels + i];
      if (bytes == 1) {
        row[i] = static_cast<unsigned char>(v);
      } else {
        row[2 * i] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
        row[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline PngImage read_png_raw(const std::filesystem::path& path) {
  FilePtr fp = open_file(path, "rb");
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + ": not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (png == nullptr) throw IoError(path.string() + ": png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  PngImage img;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": PNG read error: " + err);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const int bytes = img.bit_depth / 8;
  row.resize(png_get_rowbytes(png, info));
  img.samples.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (int y = 0; y < img.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int i = 0; i < img.width * img.channels; ++i) {
      const std::uint16_t v =
          bytes == 1 ? row[i] : static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]);
      img.samples[static_cast<std::size_t>(y) * img.width * img.channels + i] = v;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace detail

/// 8-bit RGB; values are clamped to [0,1] and rounded to the nearest level.
inline void write_png_rgb(const std::filesystem::path& path, const PixelImage& img) {
  if (img.channels() != 3) throw ShapeError(path.string() + ": RGB PNG needs 3 channels");
  detail::PngImage p{img.width(), img.height(), 3, 8, {}};
  p.samples.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = std::clamp(img.values()[i], 0.0f, 1.0f);
    p.samples[i] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
  }
  detail::write_png_raw(path, p);
}

inline PixelImage read_png_rgb(const std::filesystem::path& path) {
  const auto p = detail::read_png_raw(path);
  if (p.channels != 3 && p.channels != 1) throw IoError(path.string() + ": unsupported channel count");
  const float scale = p.bit_depth == 16 ? 65535.0f : 255.0f;
  PixelImage img(p.height, p.width, 3);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = p.channels == 3 ? c : 0;
        img(y, x, c) = static_cast<float>(p.samples[(static_cast<std::size_t>(y) * p.width + x) * p.channels + src]) / scale;
      }
    }
  }
  return img;
}

/// Binary mask as 8-bit gray PNG (0 / 255).
inline void write_png_mask(const std::filesystem::path& path, const Raster<std::uint8_t>& mask) {
  detail::PngImage p{mask.width(), mask.height(), 1, 8, {}};
  p.samples.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) p.samples[i] = mask.values()[i] != 0 ? 255 : 0;
  detail::write_png_raw(path, p);
}

/// Reads a gray mask; any value >= half range is 1.
inline Raster<std::uint8_t> read_png_mask(const std::filesystem::path& path) {
  const auto p = detail::read_png_raw(path);
  if (p.channels != 1) throw IoError(path.string() + ": mask PNG must be single-channel");
  const std::uint16_t half = p.bit_depth == 16 ? 32768 : 128;
  Raster<std::uint8_t> m(p.height, p.width, 1);
  for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = p.samples[i] >= half ? 1 : 0;
  return m;
}

inline void write_png_u16(const std::filesystem::path& path, const Raster<std::uint16_t>& ids) {
  if (ids.channels() != 1) throw ShapeError(path.string() + ": id PNG must be single-channel");
  detail::PngImage p{ids.width(), ids.height(), 1, 16, {}};
  p.samples.assign(ids.values().begin(), ids.values().end());
  detail::write_png_raw(path, p);
}

inline Raster<std::uint16_t> read_png_u16(const std::filesystem::path& path) {
  const auto p = detail::read_png_raw(path);
  if (p.channels != 1) throw IoError(path.string() + ": id PNG must be single-channel");
  Raster<std::uint16_t> r(p.height, p.width, 1);
  std::copy(p.samples.begin(), p.samples.end(), r.values().begin());
  return r;
}

/// Portable float map: "Pf" (1 channel) or "PF" (3 channels), negative scale
/// for little-endian, rows stored bottom-to-top.
inline void write_pfm(const std::filesystem::path& path, const Raster<float>& r) {
  if (r.channels() != 1 && r.channels() != 3) throw ShapeError(path.string() + ": PFM needs 1 or 3 channels");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string() + ": cannot open for writing");
  os << (r.channels() == 3 ? "PF" : "Pf") << "\n" << r.width() << " " << r.height() << "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(r.width()) * r.channels();
  for (int y = r.height() - 1; y >= 0; --y) {
    os.write(reinterpret_cast<const char*>(r.data() + static_cast<std::size_t>(y) * row),
             static_cast<std::streamsize>(row * sizeof(float)));
  }
  if (!os) throw IoError(path.string() + ": write failed");
}

inline Raster<float> read_pfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string() + ": cannot open");
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  is >> magic >> w >> h >> scale;
  if (!is || (magic != "PF" && magic != "Pf") || w <= 0 || h <= 0) {
    throw IoError(path.string() + ": malformed PFM header");
  }
  if (scale > 0.0) throw IoError(path.string() + ": big-endian PFM is not supported");
  is.get();  // single whitespace before the raster
  const int c = magic == "PF" ? 3 : 1;
  Raster<float> r(h, w, c);
  const std::size_t row = static_cast<std::size_t>(w) * c;
  for (int y = h - 1; y >= 0; --y) {
    if (!is.read(reinterpret_cast<char*>(r.data() + static_cast<std::size_t>(y) * row),
                 static_cast<std::streamsize>(row * sizeof(float)))) {
      throw IoError(path.string() + ": truncated PFM data");
    }
  }
  return r;
}

}  // namespace mf::io
