#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace fewshot {

// 8-bit RGB, row-major, channels interleaved.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  static Image blank(std::size_t height, std::size_t width, std::uint8_t value = 0);

  bool empty() const { return pixels.empty(); }
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

// Bilinear with half-pixel centers; same-size input is copied unchanged.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

// Decodes PNG (any bit depth or color type, alpha composited on black) and
// binary PPM/PGM (P6/P5, maxval <= 255). The format is sniffed from the file
// header, not the extension. Throws DataError.
Image read_image(const std::filesystem::path& path);

// Throws DataError.
void write_png(const Image& image, const std::filesystem::path& path);

}  // namespace fewshot
