#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"

namespace fewshot {

struct Pair {
  std::string a;
  std::string b;
  int y = 0;  // 1 = same class
  bool operator==(const Pair&) const = default;
};

struct EpisodeSpec {
  std::size_t k_way = 2;
  // Source images per class. An original and its augmentations count as one.
  std::size_t n_shot = 1;
  std::size_t pairs_per_image = 1;
  std::uint64_t seed = 0;
  // Forbid positives between an image and its own augmentations. Unset
  // means on for n_shot > 1, off for 1-shot.
  std::optional<bool> exclude_self_augments;

  bool excludes_self_augments() const { return exclude_self_augments.value_or(n_shot > 1); }
};

struct PairSet {
  std::vector<Pair> pairs;
  std::uint64_t seed = 0;
  std::size_t k_way = 0;
  std::size_t n_shot = 0;
  std::vector<std::string> log;  // fallbacks and with-replacement draws
};

// Uniform k-subset of class labels in random order. Throws
// std::invalid_argument unless 2 <= k_way <= number of classes.
std::vector<std::string> select_ways(const DatasetManifest& manifest, std::size_t k_way,
                                     std::uint64_t seed);

// Keeps the listed classes in the listed order. Throws DataError for an
// unknown label.
DatasetManifest restrict_classes(const DatasetManifest& manifest,
                                 const std::vector<std::string>& labels);

struct DatasetSplit {
  DatasetManifest train, val, test;
};

// Splits each class by source image so an original and all its augmentations
// share a partition. Counts are round(fraction * sources) for train and val,
// the rest for test, each at least 1. Throws std::invalid_argument for bad
// fractions and DataError naming a class with fewer than 3 sources.
DatasetSplit split_dataset(const DatasetManifest& manifest, const std::array<double, 3>& fractions,
                           std::uint64_t seed);

// n_shot source groups per class, chosen uniformly. Throws DataError naming a
// class with fewer groups.
DatasetManifest sample_shots(const DatasetManifest& manifest, std::size_t n_shot, std::uint64_t seed);

// Episode from spec (select_ways, then sample_shots), then for every anchor
// pairs_per_image positives and as many negatives. Exactly half the pairs
// are positive. Throws DataError when some anchor has no positive partner
// even in its class's full pool.
PairSet generate_balanced_pairs(const DatasetManifest& manifest, const EpisodeSpec& spec);

// All pairs over a partition without subsampling classes or shots, for
// validation and test sets.
PairSet generate_evaluation_pairs(const DatasetManifest& manifest, std::size_t pairs_per_image,
                                  std::uint64_t seed);

// Fraction of uniformly drawn (anchor, other record) pairs that share a
// class. 9/99 on 10 classes of 10.
double unconstrained_same_class_rate(const DatasetManifest& manifest, std::size_t trials,
                                     std::uint64_t seed);

// "# pairs v1 seed=<s> k=<k> n=<n>" then "id_a,id_b,label" rows.
std::string format_pairs(const PairSet& set);
PairSet parse_pairs(const std::string& text);
void write_pairs(const PairSet& set, const std::filesystem::path& path);
// Throws DataError.
PairSet read_pairs(const std::filesystem::path& path);

}  // namespace fewshot
