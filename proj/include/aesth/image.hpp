#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aesth/tensor.hpp"

namespace aesth {

/// Three-channel image with values in [0, 1], row-major HWC.
class Image {
 public:
  static constexpr Index kChannels = 3;

  Image() = default;
  Image(Index width, Index height, double fill = 0.0);

  Index width() const { return width_; }
  Index height() const { return height_; }
  bool empty() const { return pixels_.empty(); }

  double& at(Index x, Index y, Index c) { return pixels_[static_cast<std::size_t>((y * width_ + x) * kChannels + c)]; }
  double at(Index x, Index y, Index c) const {
    return pixels_[static_cast<std::size_t>((y * width_ + x) * kChannels + c)];
  }

  std::vector<double>& pixels() { return pixels_; }
  const std::vector<double>& pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  Index width_ = 0;
  Index height_ = 0;
  std::vector<double> pixels_;
};

/// 8-bit RGB raster, the in-memory form of a P6 PPM file.
struct Raster8 {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> rgb;

  Image to_image() const;
  static Raster8 quantize(const Image& img);
};

Raster8 read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Raster8& raster);

/// Header-only probe of a PPM's extents.
std::pair<Index, Index> ppm_extents(const std::filesystem::path& path);

Image flip_horizontal(const Image& img);
Image crop(const Image& img, Index x, Index y, Index width, Index height);

/// Bilinear resize with half-pixel-center sample mapping:
/// src = (dst + 0.5) * in / out - 0.5, clamped to the source extent.
Image resize_bilinear(const Image& img, Index out_w, Index out_h);

}  // namespace aesth
