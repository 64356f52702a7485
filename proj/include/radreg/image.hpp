#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace radreg {

/// Line-integral image; data is row-major, data[v * width + u].
struct Image2D {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image2D() = default;
  Image2D(int h, int w, float fill = 0.0f) : height(h), width(w), data(size_t(h) * w, fill) {}

  size_t size() const { return static_cast<size_t>(height) * width; }
  float& at(int v, int u) { return data[static_cast<size_t>(v) * width + u]; }
  float at(int v, int u) const { return data[static_cast<size_t>(v) * width + u]; }
};

/// 8-bit RGB raster, interleaved.
struct ImageRGB {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> data;

  ImageRGB() = default;
  ImageRGB(int h, int w) : height(h), width(w), data(size_t(h) * w * 3, 0) {}
  unsigned char* px(int v, int u) { return &data[(static_cast<size_t>(v) * width + u) * 3]; }
};

/// raw f32le + JSON sidecar {"dims":[H,W]}
Image2D load_image(const std::string& path);
void save_image(const Image2D& img, const std::string& path);

/// 16-bit PGM, min-max normalized, for visual inspection.
void save_pgm16(const Image2D& img, const std::string& filename);

/// 8-bit RGB PNG via zlib; falls back to binary PPM if the filename ends in .ppm.
void save_rgb(const ImageRGB& img, const std::string& filename);

}  // namespace radreg
