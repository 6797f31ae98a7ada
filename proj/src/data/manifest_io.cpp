#include <cstdio>
#include <fstream>
#include <sstream>

#include "fewshot/dataset.hpp"
#include "fewshot/errors.hpp"
#include "json.hpp"

namespace fewshot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

std::string file_name_for(std::size_t class_index, std::size_t record_index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "images/c%03zu/%05zu.png", class_index, record_index);
  return buf;
}

json to_json(const DatasetManifest& m) {
  json classes = json::array(), records = json::array();
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    const ClassEntry& cls = m.classes[c];
    classes.push_back({{"label", cls.label}, {"ids", cls.ids}});
    for (std::size_t i = 0; i < cls.ids.size(); ++i) {
      const ImageRecord& rec = m.record(cls.ids[i]);
      records.push_back({{"id", rec.id},
                         {"label", rec.class_label},
                         {"file", file_name_for(c, i)},
                         {"augmented", rec.is_augmented},
                         {"source_id", rec.source_id ? json(*rec.source_id) : json(nullptr)},
                         {"aug_kind", rec.aug_kind ? json(std::string(aug_kind_name(*rec.aug_kind)))
                                                   : json(nullptr)},
                         {"aug_param", rec.aug_param}});
    }
  }
  return {{"version", kManifestVersion},
          {"target_size", {m.target_height, m.target_width}},
          {"seed", m.seed},
          {"classes", classes},
          {"records", records},
          {"provenance", m.provenance}};
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& manifest) {
  return to_json(manifest).dump(2) + "\n";
}

void write_manifest(const DatasetManifest& manifest, const fs::path& out_dir) {
  const json doc = to_json(manifest);
  for (const json& rec : doc["records"]) {
    const fs::path file = out_dir / rec["file"].get<std::string>();
    fs::create_directories(file.parent_path());
    write_png(manifest.record(rec["id"].get<std::string>()).pixels, file);
  }
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write " + (out_dir / "manifest.json").string());
  out << doc.dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const fs::path dir = manifest_path.parent_path();
  DatasetManifest m;
  try {
    if (doc.at("version").get<int>() != kManifestVersion) {
      throw DataError("unsupported manifest version in " + manifest_path.string());
    }
    m.target_height = doc.at("target_size").at(0).get<std::size_t>();
    m.target_width = doc.at("target_size").at(1).get<std::size_t>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.provenance = doc.at("provenance").get<std::vector<std::string>>();
    for (const json& cls : doc.at("classes")) {
      m.classes.push_back({cls.at("label").get<std::string>(), cls.at("ids").get<std::vector<std::string>>()});
    }
    for (const json& rec : doc.at("records")) {
      ImageRecord r;
      r.id = rec.at("id").get<std::string>();
      r.class_label = rec.at("label").get<std::string>();
      r.is_augmented = rec.at("augmented").get<bool>();
      if (!rec.at("source_id").is_null()) r.source_id = rec.at("source_id").get<std::string>();
      if (!rec.at("aug_kind").is_null()) r.aug_kind = parse_aug_kind(rec.at("aug_kind").get<std::string>());
      r.aug_param = rec.at("aug_param").get<std::string>();
      const fs::path file = dir / rec.at("file").get<std::string>();
      r.pixels = read_image(file);
      if (r.pixels.height != m.target_height || r.pixels.width != m.target_width) {
        throw DataError(file.string() + " does not match the manifest target size");
      }
      m.records.emplace(r.id, std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  for (const ClassEntry& cls : m.classes) {
    for (const std::string& id : cls.ids) m.record(id);
  }
  return m;
}

}  // namespace fewshot
