#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/image.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

enum class AugKind { kNoise, kGamma, kCrop, kRotate, kHflip, kVflip };

std::string_view aug_kind_name(AugKind kind);
// Throws DataError on an unknown name.
AugKind parse_aug_kind(std::string_view name);

struct ImageRecord {
  std::string id;
  std::string class_label;
  Image pixels;
  bool is_augmented = false;
  std::optional<std::string> source_id;
  std::optional<AugKind> aug_kind;
  std::string aug_param;  // e.g. "angle=33.2", empty for originals
};

struct ClassEntry {
  std::string label;
  std::vector<std::string> ids;
};

struct DatasetManifest {
  std::vector<ClassEntry> classes;
  std::size_t target_height = 0;
  std::size_t target_width = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> provenance;
  std::map<std::string, ImageRecord> records;

  // Throws DataError for an unknown id.
  const ImageRecord& record(const std::string& id) const;
  const ClassEntry* find_class(std::string_view label) const;
  std::size_t size() const;
  // Original (non-augmented) id for any record.
  std::string source_of(const std::string& id) const;
};

// Reads root/<class>/<files>. Classes and files are visited in lexicographic
// order. Undecodable files are skipped and logged. Throws DataError when the
// tree has no class directories or a class has no decodable image.
DatasetManifest ingest(const std::filesystem::path& root, std::size_t height, std::size_t width);

// Exact-duplicate removal over decoded pixels (size plus bytes). The first
// occurrence in class/file order is kept.
DatasetManifest dedup(const DatasetManifest& manifest);

// Individual augmentations.
Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);
// Counter-clockwise about the image center, bilinear, black outside.
Image rotate(const Image& image, double degrees);
// Removes `fraction` of each dimension around the center, then resizes back.
Image center_zoom_crop(const Image& image, double fraction);
// out = round(255 * (in/255)^gamma).
Image adjust_gamma(const Image& image, double gamma);
Image add_gaussian_noise(const Image& image, double sigma, Rng& rng);

// Six children in the order rotate, hflip, vflip, crop, gamma, noise. Each
// child draws its parameters from derive_seed(seed, child id). Throws
// std::invalid_argument for an already augmented record.
std::vector<ImageRecord> augment_six(const ImageRecord& record, std::uint64_t seed);

// Augments every original six times, then trims every class to
// 7 * (smallest original class size) uniformly at random. Throws
// std::invalid_argument if the manifest already holds augmented records or a
// class is empty.
DatasetManifest balance(const DatasetManifest& manifest, std::uint64_t seed);

// Renders k shape/palette families as PNGs under root/class_XX/img_YYY.png.
// Throws std::invalid_argument for k < 2 or per_class < 1.
void make_synthetic_dataset(const std::filesystem::path& root, std::size_t k_classes,
                            std::size_t per_class, std::size_t height, std::size_t width,
                            std::uint64_t seed);

// manifest.json (key-sorted, newline-terminated) plus images/<...>.png.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& out_dir);
// Reads manifest.json and the images it references. Throws DataError.
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
// The JSON text alone, for golden comparisons.
std::string manifest_to_json(const DatasetManifest& manifest);

}  // namespace fewshot
