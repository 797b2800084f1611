#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace somfuse {

/// Interleaved 8-bit image, row-major, `channels` samples per pixel.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c = 3, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  bool operator==(const Image&) const = default;
};

/// Any PNG colour type is converted to 8-bit RGB. Throws FormatError.
Image decode_png(std::string_view bytes);
Image read_png(const std::filesystem::path& path);
/// RGB8 only.
std::string encode_png(const Image& image);

/// Bilinear resampling with pixel-centre alignment.
Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);

}  // namespace somfuse
