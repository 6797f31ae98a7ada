#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "fewshot/dataset.hpp"
#include "fewshot/errors.hpp"

namespace fewshot {

namespace fs = std::filesystem;

const ImageRecord& DatasetManifest::record(const std::string& id) const {
  const auto it = records.find(id);
  if (it == records.end()) throw DataError("unknown record id '" + id + "'");
  return it->second;
}

const ClassEntry* DatasetManifest::find_class(std::string_view label) const {
  for (const ClassEntry& c : classes) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

std::size_t DatasetManifest::size() const {
  std::size_t n = 0;
  for (const ClassEntry& c : classes) n += c.ids.size();
  return n;
}

std::string DatasetManifest::source_of(const std::string& id) const {
  return record(id).source_id.value_or(id);
}

namespace {

// Ids end up in CSV rows and use '#' to mark augmentations.
std::string sanitize(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c == ',' || c == '#' || c == '"' || std::isspace(static_cast<unsigned char>(c))) c = '_';
  }
  return out;
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> entries;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().starts_with(".")) continue;
    entries.push_back(entry.path());
  }
  std::sort(entries.begin(), entries.end());
  return entries;
}

std::string content_hash(const Image& image) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(image.height),
                                 static_cast<std::uint32_t>(image.width)};
  const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, dims, sizeof dims) == 1 &&
                  EVP_DigestUpdate(ctx, image.pixels.data(), image.pixels.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-256 digest failed");
  return {reinterpret_cast<const char*>(digest), length};
}

}  // namespace

DatasetManifest ingest(const fs::path& root, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw DataError("ingest: target size must be positive");
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("cannot read dataset root " + root.string());
  DatasetManifest m;
  m.target_height = height;
  m.target_width = width;
  std::set<std::string> used_labels;
  for (const fs::path& class_dir : sorted_entries(root)) {
    if (!fs::is_directory(class_dir)) continue;
    const std::string label = class_dir.filename().string();
    std::string key = sanitize(label);
    while (!used_labels.insert(key).second) key += "~";
    ClassEntry entry{label, {}};
    for (const fs::path& file : sorted_entries(class_dir)) {
      if (!fs::is_regular_file(file)) continue;
      const std::string rel = label + "/" + file.filename().string();
      ImageRecord rec;
      try {
        rec.pixels = resize_bilinear(read_image(file), height, width);
      } catch (const DataError& e) {
        m.provenance.push_back("ingest: skipped " + rel + ": " + e.what());
        continue;
      }
      rec.id = key + "/" + sanitize(file.filename().string());
      while (m.records.count(rec.id)) rec.id += "~";
      rec.class_label = label;
      entry.ids.push_back(rec.id);
      m.records.emplace(rec.id, std::move(rec));
    }
    if (entry.ids.empty()) throw DataError("class '" + label + "' has no decodable images");
    m.provenance.push_back("ingest: class " + label + " images=" + std::to_string(entry.ids.size()));
    m.classes.push_back(std::move(entry));
  }
  if (m.classes.empty()) throw DataError("empty dataset: no class directories under " + root.string());
  return m;
}

DatasetManifest dedup(const DatasetManifest& manifest) {
  DatasetManifest out = manifest;
  out.classes.clear();
  std::unordered_map<std::string, std::string> first_seen;  // hash -> id
  for (const ClassEntry& cls : manifest.classes) {
    ClassEntry kept{cls.label, {}};
    for (const std::string& id : cls.ids) {
      const ImageRecord& rec = manifest.record(id);
      const auto [it, inserted] = first_seen.emplace(content_hash(rec.pixels), id);
      if (inserted) {
        kept.ids.push_back(id);
        continue;
      }
      const ImageRecord& original = manifest.record(it->second);
      out.provenance.push_back("dedup: removed " + id + " (" + rec.class_label + ") duplicate of " +
                               original.id + " (" + original.class_label + ")");
      out.records.erase(id);
    }
    if (kept.ids.empty()) {
      out.provenance.push_back("dedup: class " + cls.label + " is empty after duplicate removal");
      continue;
    }
    out.classes.push_back(std::move(kept));
  }
  return out;
}

DatasetManifest balance(const DatasetManifest& manifest, std::uint64_t seed) {
  if (manifest.classes.empty()) throw std::invalid_argument("balance: manifest has no classes");
  std::size_t smallest = SIZE_MAX;
  for (const ClassEntry& cls : manifest.classes) {
    if (cls.ids.empty()) throw std::invalid_argument("balance: class " + cls.label + " is empty");
    smallest = std::min(smallest, cls.ids.size());
    for (const std::string& id : cls.ids) {
      if (manifest.record(id).is_augmented) {
        throw std::invalid_argument("balance: manifest already contains augmented record " + id);
      }
    }
  }
  const std::size_t target = 7 * smallest;
  DatasetManifest out = manifest;
  out.seed = seed;
  out.classes.clear();
  for (const ClassEntry& cls : manifest.classes) {
    std::vector<std::string> grown;
    for (const std::string& id : cls.ids) {
      grown.push_back(id);
      for (ImageRecord& child : augment_six(manifest.record(id), seed)) {
        out.provenance.push_back("augment: " + child.id +
                                 (child.aug_param.empty() ? "" : " " + child.aug_param));
        grown.push_back(child.id);
        out.records.emplace(child.id, std::move(child));
      }
    }
    ClassEntry kept{cls.label, {}};
    if (grown.size() > target) {
      std::vector<std::size_t> order(grown.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng(derive_seed(seed, "balance/" + cls.label));
      rng.shuffle(order);
      std::vector<bool> keep(grown.size(), false);
      for (std::size_t i = 0; i < target; ++i) keep[order[i]] = true;
      for (std::size_t i = 0; i < grown.size(); ++i) {
        if (keep[i]) {
          kept.ids.push_back(grown[i]);
        } else {
          out.provenance.push_back("balance: trimmed " + grown[i] + " from " + cls.label);
          out.records.erase(grown[i]);
        }
      }
      for (const std::string& id : kept.ids) {
        const ImageRecord& rec = out.record(id);
        if (rec.source_id && !out.records.count(*rec.source_id)) {
          out.provenance.push_back("balance: kept " + id + " whose source " + *rec.source_id +
                                   " was trimmed");
        }
      }
    } else {
      kept.ids = std::move(grown);
    }
    out.provenance.push_back("balance: class " + cls.label + " original=" +
                             std::to_string(cls.ids.size()) + " augmented=" +
                             std::to_string(7 * cls.ids.size()) + " final=" +
                             std::to_string(kept.ids.size()));
    out.classes.push_back(std::move(kept));
  }
  return out;
}

}  // namespace fewshot
