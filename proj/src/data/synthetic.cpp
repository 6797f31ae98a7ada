#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "fewshot/dataset.hpp"

namespace fewshot {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double f = h * 6.0;
  const int sector = static_cast<int>(f) % 6;
  const double frac = f - std::floor(f);
  const double p = v * (1 - s), q = v * (1 - s * frac), t = v * (1 - s * (1 - frac));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

constexpr int kShapeFamilies = 8;

// Coverage test for shape family `shape` in coordinates centered on the
// object and scaled by its radius.
bool inside(int shape, double u, double v) {
  const double r = std::hypot(u, v);
  switch (shape) {
    case 0: return r <= 1.0;                                   // disk
    case 1: return std::fabs(u) <= 0.8 && std::fabs(v) <= 0.8;  // square
    case 2: return v <= 0.8 && v >= -0.9 + 1.7 * std::fabs(u) / 0.9;  // triangle
    case 3: return r <= 1.0 && r >= 0.55;                      // ring
    case 4: return (std::fabs(u) <= 0.3 && std::fabs(v) <= 1.0) ||
                   (std::fabs(v) <= 0.3 && std::fabs(u) <= 1.0);  // cross
    case 5: return std::fabs(u) + std::fabs(v) <= 1.0;          // diamond
    case 6: return std::fabs(u) <= 1.0 && std::fabs(v) <= 1.0 &&
                   static_cast<int>(std::floor((v + 1.0) * 2.5)) % 2 == 0;  // bars
    default: return std::fabs(u) <= 1.0 && std::fabs(v) <= 1.0 &&
                    (static_cast<int>(std::floor((u + 1.0) * 2)) +
                     static_cast<int>(std::floor((v + 1.0) * 2))) % 2 == 0;  // checker
  }
}

Image render(std::size_t cls, std::size_t k, std::size_t height, std::size_t width, Rng& rng) {
  const int shape = static_cast<int>(cls % kShapeFamilies);
  // Classes that share a shape family differ in palette.
  const double base_hue = static_cast<double>(cls) / static_cast<double>(k);
  const double hue = base_hue + rng.uniform(-0.02, 0.02);
  const Rgb fg = hsv(hue, 0.85, 0.95);
  const Rgb bg = hsv(hue + 0.5, 0.35, 0.25 + 0.1 * static_cast<double>(cls / kShapeFamilies % 3));
  const double dim = static_cast<double>(std::min(height, width));
  const double radius = dim * rng.uniform(0.25, 0.38);
  const double cy = static_cast<double>(height) / 2 + dim * rng.uniform(-0.12, 0.12);
  const double cx = static_cast<double>(width) / 2 + dim * rng.uniform(-0.12, 0.12);
  const double tilt = rng.uniform(-0.25, 0.25);
  const double cs = std::cos(tilt), sn = std::sin(tilt);
  Image img = Image::blank(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = (static_cast<double>(y) + 0.5 - cy) / radius;
      const double dx = (static_cast<double>(x) + 0.5 - cx) / radius;
      const bool on = inside(shape, dx * cs + dy * sn, -dx * sn + dy * cs);
      const Rgb& col = on ? fg : bg;
      const double channel[3] = {col.r, col.g, col.b};
      for (std::size_t c = 0; c < 3; ++c) {
        const double value = 255.0 * channel[c] + 8.0 * rng.normal();
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
      }
    }
  }
  return img;
}

}  // namespace

void make_synthetic_dataset(const std::filesystem::path& root, std::size_t k_classes,
                            std::size_t per_class, std::size_t height, std::size_t width,
                            std::uint64_t seed) {
  if (k_classes < 2) throw std::invalid_argument("synthetic dataset needs at least 2 classes (ways)");
  if (per_class < 1) throw std::invalid_argument("synthetic dataset needs at least 1 image per class");
  if (height < 4 || width < 4) throw std::invalid_argument("synthetic images must be at least 4x4");
  for (std::size_t c = 0; c < k_classes; ++c) {
    char dir[32];
    std::snprintf(dir, sizeof dir, "class_%02zu", c);
    const std::filesystem::path class_dir = root / dir;
    std::filesystem::create_directories(class_dir);
    for (std::size_t i = 0; i < per_class; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "img_%03zu.png", i);
      Rng rng(derive_seed(seed, std::string(dir) + "/" + file));
      write_png(render(c, k_classes, height, width, rng), class_dir / file);
    }
  }
}

}  // namespace fewshot
