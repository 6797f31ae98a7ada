#include "fewshot/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "fewshot/errors.hpp"

namespace fewshot {

Image Image::blank(std::size_t height, std::size_t width, std::uint8_t value) {
  Image img;
  img.height = height;
  img.width = width;
  img.pixels.assign(height * width * 3, value);
  return img;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (image.empty() || height == 0 || width == 0) {
    throw DataError("resize: empty source or target size");
  }
  if (image.height == height && image.width == width) return image;
  Image out = Image::blank(height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double max_y = static_cast<double>(image.height - 1);
  const double max_x = static_cast<double>(image.width - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bottom * wy));
      }
    }
  }
  return out;
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image decode_png(const std::string& bytes, const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw DataError("cannot decode " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image img = Image::blank(png.height, png.width);
  if (img.empty()) {
    png_image_free(&png);
    throw DataError("cannot decode " + path.string() + ": zero-sized image");
  }
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw DataError("cannot decode " + path.string() + ": " + message);
  }
  return img;
}

Image decode_pnm(const std::string& bytes, const std::filesystem::path& path) {
  const bool color = bytes[1] == '6';
  std::size_t pos = 2;
  auto next_number = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    long value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + (bytes[pos++] - '0');
      any = true;
      if (value > 1'000'000) break;
    }
    if (!any) throw DataError("cannot decode " + path.string() + ": malformed PNM header");
    return value;
  };
  const long width = next_number(), height = next_number(), maxval = next_number();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError("cannot decode " + path.string() + ": unsupported PNM dimensions or maxval");
  }
  ++pos;  // single whitespace before the raster
  const std::size_t channels = color ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * channels;
  if (bytes.size() < pos + need) throw DataError("cannot decode " + path.string() + ": truncated PNM");
  Image img = Image::blank(static_cast<std::size_t>(height), static_cast<std::size_t>(width));
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto raw = static_cast<unsigned char>(bytes[pos + i * channels + (color ? c : 0)]);
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(raw * 255.0 / maxval));
    }
  }
  return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  static constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    return decode_pnm(bytes, path);
  }
  throw DataError("cannot decode " + path.string() + ": unrecognized image format");
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.empty()) throw DataError("write_png: empty image");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw DataError("cannot write " + path.string() + ": " + message);
  }
}

}  // namespace fewshot
