#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>

#include "fewshot/dataset.hpp"
#include "fewshot/errors.hpp"

namespace fewshot {

namespace {

// Bilinear sample at pixel-center coordinates, clamped to the border.
double sample(const Image& img, double fy, double fx, std::size_t c) {
  fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
  fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(fy);
  const auto x0 = static_cast<std::size_t>(fx);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double wy = fy - static_cast<double>(y0), wx = fx - static_cast<double>(x0);
  const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
  const double bottom = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
  return top * (1 - wy) + bottom * wy;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::string format_param(const char* key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s=%.6g", key, value);
  return buf;
}

}  // namespace

std::string_view aug_kind_name(AugKind kind) {
  switch (kind) {
    case AugKind::kNoise: return "noise";
    case AugKind::kGamma: return "gamma";
    case AugKind::kCrop: return "crop";
    case AugKind::kRotate: return "rotate";
    case AugKind::kHflip: return "hflip";
    case AugKind::kVflip: return "vflip";
  }
  return "unknown";
}

AugKind parse_aug_kind(std::string_view name) {
  for (const AugKind k : {AugKind::kNoise, AugKind::kGamma, AugKind::kCrop, AugKind::kRotate,
                          AugKind::kHflip, AugKind::kVflip}) {
    if (aug_kind_name(k) == name) return k;
  }
  throw DataError("unknown augmentation kind '" + std::string(name) + "'");
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
  return out;
}

Image flip_vertical(const Image& image) {
  Image out = image;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(image.height - 1 - y, x, c);
  return out;
}

Image rotate(const Image& image, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(image.height) - 1) / 2;
  const double cx = (static_cast<double>(image.width) - 1) / 2;
  const double max_y = static_cast<double>(image.height - 1), max_x = static_cast<double>(image.width - 1);
  Image out = Image::blank(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = cx + dx * cs - dy * sn;
      const double sy = cy + dx * sn + dy * cs;
      // Tolerance keeps a 0 or 360 degree rotation an exact copy.
      constexpr double kSlack = 1e-9;
      if (sx < -kSlack || sy < -kSlack || sx > max_x + kSlack || sy > max_y + kSlack) continue;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = to_byte(sample(image, sy, sx, c));
    }
  }
  return out;
}

Image center_zoom_crop(const Image& image, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("center_zoom_crop: fraction must be in [0,1)");
  }
  const double keep = 1.0 - fraction;
  const double top = static_cast<double>(image.height) * fraction / 2;
  const double left = static_cast<double>(image.width) * fraction / 2;
  Image out = Image::blank(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    const double fy = top + (static_cast<double>(y) + 0.5) * keep - 0.5;
    for (std::size_t x = 0; x < image.width; ++x) {
      const double fx = left + (static_cast<double>(x) + 0.5) * keep - 0.5;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = to_byte(sample(image, fy, fx, c));
    }
  }
  return out;
}

Image adjust_gamma(const Image& image, double gamma) {
  std::uint8_t table[256];
  for (int v = 0; v < 256; ++v) table[v] = to_byte(255.0 * std::pow(v / 255.0, gamma));
  Image out = image;
  for (std::uint8_t& p : out.pixels) p = table[p];
  return out;
}

Image add_gaussian_noise(const Image& image, double sigma, Rng& rng) {
  Image out = image;
  for (std::uint8_t& p : out.pixels) p = to_byte(p + sigma * rng.normal());
  return out;
}

std::vector<ImageRecord> augment_six(const ImageRecord& record, std::uint64_t seed) {
  if (record.is_augmented) {
    throw std::invalid_argument("augment_six: " + record.id + " is already an augmentation");
  }
  std::vector<ImageRecord> children;
  for (const AugKind kind : {AugKind::kRotate, AugKind::kHflip, AugKind::kVflip, AugKind::kCrop,
                             AugKind::kGamma, AugKind::kNoise}) {
    ImageRecord child;
    child.id = record.id + "#" + std::string(aug_kind_name(kind));
    child.class_label = record.class_label;
    child.is_augmented = true;
    child.source_id = record.id;
    child.aug_kind = kind;
    Rng rng(derive_seed(seed, child.id));
    switch (kind) {
      case AugKind::kRotate: {
        const double angle = rng.uniform(30.0, 40.0);
        child.pixels = rotate(record.pixels, angle);
        child.aug_param = format_param("angle", angle);
        break;
      }
      case AugKind::kHflip:
        child.pixels = flip_horizontal(record.pixels);
        break;
      case AugKind::kVflip:
        child.pixels = flip_vertical(record.pixels);
        break;
      case AugKind::kCrop: {
        const double fraction = rng.uniform(0.30, 0.45);
        child.pixels = center_zoom_crop(record.pixels, fraction);
        child.aug_param = format_param("fraction", fraction);
        break;
      }
      case AugKind::kGamma: {
        const double gamma = rng.uniform(2.0, 3.0);
        child.pixels = adjust_gamma(record.pixels, gamma);
        child.aug_param = format_param("gamma", gamma);
        break;
      }
      case AugKind::kNoise:
        child.pixels = add_gaussian_noise(record.pixels, 30.0, rng);
        child.aug_param = format_param("sigma", 30.0);
        break;
    }
    children.push_back(std::move(child));
  }
  return children;
}

}  // namespace fewshot
