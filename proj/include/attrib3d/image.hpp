#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace attrib3d {

/// Interleaved H x W x C float image, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// 8-bit image as persisted on disk (binary PPM).
struct ByteImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // RGB interleaved

  friend bool operator==(const ByteImage&, const ByteImage&) = default;
};

ByteImage quantize(const Image& img);
Image dequantize(const ByteImage& img);

void write_ppm(const ByteImage& img, const std::string& path);
ByteImage read_ppm(const std::string& path);
std::vector<std::uint8_t> encode_ppm(const ByteImage& img);
ByteImage decode_ppm(const std::vector<std::uint8_t>& bytes);

}  // namespace attrib3d
