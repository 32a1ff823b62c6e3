#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace o2r {

/// 8-bit RGB image, row-major interleaved (HWC).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const { return pixels.empty(); }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * 3 + c;
  }
  std::uint8_t& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline std::uint8_t saturate_u8(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

/// Bilinear sample at continuous pixel-index coordinates, edge-clamped.
double sample_bilinear(const Image& img, double x, double y, int c);

Image resize_bilinear(const Image& img, int width, int height);

Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& img);

}  // namespace o2r
