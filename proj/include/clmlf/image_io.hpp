#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace clmlf {

/// 8-bit interleaved image, rows top to bottom, pixels as H×W×C.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Planar float image [C, H, W].
struct FloatImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool operator==(const FloatImage&) const = default;
};

/// Decodes a PNG (channels as stored) or JPEG file, detected from its signature. Throws
/// std::runtime_error naming the path on failure.
Image read_image(const std::filesystem::path& path);

/// Writes 8-bit gray, gray+alpha, RGB or RGBA data as PNG.
void write_png(const Image& image, const std::filesystem::path& path);

/// Converts to 3 channels: gray is replicated, alpha is dropped.
Image to_rgb(const Image& image);

/// Bilinear resize with half-pixel centers; identity when sizes match.
Image resize_bilinear(const Image& image, int height, int width);

/// [0, 255] bytes to planar [0, 1] floats.
FloatImage to_float(const Image& image);

/// Planar [0, 1] floats back to bytes, rounding and clamping.
Image to_bytes(const FloatImage& image);

}  // namespace clmlf
